"""Smooth feed-forward networks with input derivatives up to second order.

Hidden layers use softplus so the value surface is twice continuously
differentiable; the output layer is affine. Parameters are stored as numpy
arrays and evaluated through jax in float64, which supplies the reverse pass
(input gradient), the forward-over-reverse pass (Hessian diagonals) and the
parameter gradients used by the trainers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Optional, Sequence

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigError, DataError, NumericError  # noqa: E402


def softplus(x):
    """log(1 + e^x) without overflow."""
    return jnp.logaddexp(x, 0.0)


def mlp_apply(params, x):
    """Affine-softplus chain; ``params`` is a sequence of (W, b) pairs."""
    h = x
    for w, b in params[:-1]:
        h = softplus(w @ h + b)
    w, b = params[-1]
    return w @ h + b


def scalar_apply(params, x):
    return mlp_apply(params, x)[0]


@dataclass
class DiffMlp:
    layer_dims: list[int]
    params: list[tuple[np.ndarray, np.ndarray]]

    activation = "softplus"

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in self.params)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def jax_params(self):
        return tuple((jnp.asarray(w), jnp.asarray(b)) for w, b in self.params)

    def with_params(self, params) -> "DiffMlp":
        arrays = [(np.asarray(w, dtype=float), np.asarray(b, dtype=float)) for w, b in params]
        check_finite(arrays)
        return DiffMlp(list(self.layer_dims), arrays)

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "weights": [w.tolist() for w, _ in self.params],
            "biases": [b.tolist() for _, b in self.params],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DiffMlp":
        params = [
            (np.asarray(w, dtype=float).reshape(o, i), np.asarray(b, dtype=float).reshape(o))
            for w, b, i, o in zip(payload["weights"], payload["biases"],
                                  payload["layer_dims"][:-1], payload["layer_dims"][1:])
        ]
        check_finite(params)
        return cls(list(payload["layer_dims"]), params)


def check_finite(params) -> None:
    for i, (w, b) in enumerate(params):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError(f"non-finite parameters in layer {i}")


def init_mlp(layer_dims: Sequence[int], seed: int) -> DiffMlp:
    """Glorot-uniform weights, zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigError(f"invalid layer dims {layer_dims}")
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append((rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return DiffMlp(dims, params)


def _check_input(net: DiffMlp, x) -> jnp.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (net.in_dim,):
        raise DataError(f"network expects input of length {net.in_dim}, got shape {x.shape}")
    return jnp.asarray(x)


def forward(net: DiffMlp, x) -> np.ndarray | float:
    out = np.asarray(_forward(net.jax_params(), _check_input(net, x)))
    return float(out[0]) if net.out_dim == 1 else out


def grad_input(net: DiffMlp, x) -> np.ndarray:
    """Gradient of a scalar-output network with respect to its whole input."""
    if net.out_dim != 1:
        raise DataError("grad_input needs a scalar-output network")
    return np.asarray(_grad(net.jax_params(), _check_input(net, x)))


def hessian_diag_exact(fn, x, weights):
    """sum_i weights_i * d^2 fn / dx_i^2, one forward-over-reverse pass per coordinate."""
    grad_fn = jax.grad(fn)
    basis = jnp.eye(x.shape[0])

    def second(e):
        return jax.jvp(grad_fn, (x,), (e,))[1] @ e

    return jnp.sum(weights * jax.vmap(second)(basis))


def hessian_trace_probes(fn, x, probes):
    """Mean of v^T (d^2 fn) v over the rows of ``probes``."""
    grad_fn = jax.grad(fn)

    def quad(v):
        return jax.jvp(grad_fn, (x,), (v,))[1] @ v

    return jnp.mean(jax.vmap(quad)(probes))


def rademacher(rng: np.random.Generator, k: int, dim: int) -> np.ndarray:
    return rng.choice(np.array([-1.0, 1.0]), size=(k, dim))


def hessian_trace(net: DiffMlp, x, mode: str = "exact", k: int = 8, seed: int = 0,
                  weights: Optional[np.ndarray] = None) -> float:
    """Trace of diag(weights) times the input Hessian (weights default to ones).

    ``exact`` sweeps every coordinate; ``hutchinson`` averages k Rademacher
    probes rescaled by sqrt(weights).
    """
    if net.out_dim != 1:
        raise DataError("hessian_trace needs a scalar-output network")
    xj = _check_input(net, x)
    w = np.ones(net.in_dim) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (net.in_dim,):
        raise DataError("weights must match the input dimension")
    params = net.jax_params()
    if mode == "exact":
        return float(_hess_exact(params, xj, jnp.asarray(w)))
    if mode == "hutchinson":
        if k < 1:
            raise ConfigError("hutchinson needs k >= 1 probes")
        probes = rademacher(np.random.default_rng(seed), k, net.in_dim) * np.sqrt(w)
        return float(_hess_probes(params, xj, jnp.asarray(probes)))
    raise ConfigError(f"unknown hessian_trace mode {mode!r}")


@jax.jit
def _forward(params, x):
    return mlp_apply(params, x)


@jax.jit
def _grad(params, x):
    return jax.grad(partial(scalar_apply, params))(x)


@jax.jit
def _hess_exact(params, x, w):
    return hessian_diag_exact(partial(scalar_apply, params), x, w)


@jax.jit
def _hess_probes(params, x, probes):
    return hessian_trace_probes(partial(scalar_apply, params), x, probes)


@dataclass
class AdamState:
    m: object
    v: object
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
        return cls(zeros, zeros, 0, lr, beta1, beta2, eps)


def adam_update(params, grads, m, v, step, lr, beta1, beta2, eps):
    """Pure Adam step with bias correction; ``step`` is the post-increment count."""
    m = jax.tree_util.tree_map(lambda a, g: beta1 * a + (1 - beta1) * g, m, grads)
    v = jax.tree_util.tree_map(lambda a, g: beta2 * a + (1 - beta2) * g * g, v, grads)
    c1 = 1 - beta1**step
    c2 = 1 - beta2**step
    params = jax.tree_util.tree_map(
        lambda p, a, b: p - lr * (a / c1) / (jnp.sqrt(b / c2) + eps), params, m, v
    )
    return params, m, v


def adam_step(params, grads, state: AdamState):
    step = state.step + 1
    params, m, v = adam_update(params, grads, state.m, state.v, step, state.lr,
                               state.beta1, state.beta2, state.eps)
    return params, AdamState(m, v, step, state.lr, state.beta1, state.beta2, state.eps)
