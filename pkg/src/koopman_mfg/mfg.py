"""Adversarial value/generator solver for the latent mean-field control problem.

Latent dynamics follow dz = ((K - I) z + B u) dt + Sigma dW with running cost
C(W_out z) + gamma u^T R u. A value network is fitted to the HJB residual on
points produced by a generator network (plus an empirical Bellman residual on
recorded latent transitions), while the generator is pushed toward states where
the value-weighted running cost is low. Feedback is read off the value gradient.

Time is normalized: t in [0, 1] spans ``horizon`` physical samples, so time
derivatives of the networks are divided by ``horizon``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from functools import partial
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import diffnet
from .connectivity import BrainGraph, cost_matrix
from .diffnet import DiffMlp, adam_update, hessian_diag_exact, hessian_trace_probes, init_mlp, jax, jnp, rademacher
from .errors import ConfigError, DataError, NumericError
from .koopman import KoopmanModel
from .metrics import wasserstein1

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8


@dataclass
class MfgConfig:
    gamma: float = 1000.0
    # k x k control weight; identity when omitted
    r: Optional[list] = None
    sigma: float = 1.0
    horizon: float = 200.0
    dt: float = 1.0
    batch_size: int = 64
    n_iter: int = 3000
    lr_value: float = 1e-4
    lr_generator: float = 4e-4
    real_weight: float = 1.0
    hutchinson_k: int = 8
    hidden: tuple = (128, 128)
    p_real: float = 0.5
    terminal_weight: float = 0.0
    quadratic_form: bool = False
    value_scale: float = 0.0
    whiten: bool = False
    # 1 -> scalar head; > 1 -> phi built from half the mean square of that many outputs
    value_width: int = 1
    # multiplier on the initial value output layer; 0 starts from phi = terminal cost
    output_init: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if self.horizon <= 0 or self.dt <= 0:
            raise ConfigError("horizon and dt must be > 0")
        if self.batch_size < 1 or self.n_iter < 0:
            raise ConfigError("batch_size must be >= 1 and n_iter >= 0")
        if self.real_weight < 0 or self.sigma < 0 or self.terminal_weight < 0:
            raise ConfigError("real_weight, sigma and terminal_weight must be >= 0")
        if not 0 <= self.p_real <= 1:
            raise ConfigError("p_real must lie in [0, 1]")
        if self.hutchinson_k < 0:
            raise ConfigError("hutchinson_k must be >= 0 (0 selects the exact trace)")
        if self.value_scale < 0:
            raise ConfigError("value_scale must be >= 0 (0 selects automatic scaling)")

    def r_matrix(self, k: int) -> np.ndarray:
        r = np.eye(k) if self.r is None else np.asarray(self.r, dtype=float)
        if r.shape != (k, k):
            raise ConfigError(f"R must be {k}x{k}, got {r.shape}")
        if not np.allclose(r, r.T, atol=1e-12):
            raise ConfigError("R must be symmetric")
        try:
            np.linalg.cholesky(r)
        except np.linalg.LinAlgError:
            raise ConfigError("R must be positive definite") from None
        return r

    @classmethod
    def from_dict(cls, values: dict) -> "MfgConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown mfg keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class LatentProblem:
    """Everything the losses need, expressed in latent coordinates."""

    drift: np.ndarray        # K - I
    b: np.ndarray            # n_res x k actuated columns of B_latent
    r: np.ndarray
    gamma: float
    w_out: np.ndarray
    cost: np.ndarray         # physical cost matrix, C(x) = x^T cost x
    sigma: np.ndarray        # per-coordinate diffusion
    horizon: float = 1.0
    terminal: Optional[np.ndarray] = None

    def __post_init__(self):
        self.r_factor = scipy.linalg.cho_factor(self.r, lower=True)
        self.control_gram = self.b @ scipy.linalg.cho_solve(self.r_factor, self.b.T)
        self.latent_cost = self.w_out.T @ self.cost @ self.w_out
        if self.terminal is None:
            self.terminal = np.zeros_like(self.drift)

    @property
    def n_res(self) -> int:
        return self.drift.shape[0]

    @property
    def k(self) -> int:
        return self.b.shape[1]

    @classmethod
    def build(cls, model: KoopmanModel, graph: BrainGraph, config: MfgConfig) -> "LatentProblem":
        if graph.n != model.n:
            raise DataError(f"graph has {graph.n} nodes, model has {model.n} channels")
        b = model.b_actuated
        cost = cost_matrix(graph, config.quadratic_form)
        latent_cost = model.w_out.T @ cost @ model.w_out
        return cls(
            drift=model.k - np.eye(model.n_res),
            b=b,
            r=config.r_matrix(b.shape[1]),
            gamma=config.gamma,
            w_out=model.w_out,
            cost=cost,
            sigma=config.sigma * model.sigma,
            horizon=config.horizon,
            terminal=config.terminal_weight * latent_cost,
        )

    def jax_constants(self) -> dict:
        return {
            "drift": jnp.asarray(self.drift),
            "gram": jnp.asarray(self.control_gram),
            "qz": jnp.asarray(self.latent_cost),
            "qt": jnp.asarray(self.terminal),
            "sig2": jnp.asarray(self.sigma**2),
        }


def hamiltonian(z, p, problem: LatentProblem) -> float:
    """p^T (K - I) z - (1 / 4 gamma) p^T B R^{-1} B^T p."""
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    btp = problem.b.T @ p
    quad = btp @ scipy.linalg.cho_solve(problem.r_factor, btp)
    return float(p @ (problem.drift @ z) - quad / (4.0 * problem.gamma))


def control_from_costate(p, problem: LatentProblem) -> np.ndarray:
    """u = -(1 / 2 gamma) R^{-1} B^T p, the minimizer of gamma u^T R u + p^T B u."""
    return -scipy.linalg.cho_solve(problem.r_factor, problem.b.T @ np.asarray(p, dtype=float)) / (2.0 * problem.gamma)


def latent_state_cost(z, problem: LatentProblem) -> float:
    x = problem.w_out @ np.asarray(z, dtype=float)
    return float(x @ problem.cost @ x)


# jax building blocks -------------------------------------------------------

def value_apply(vparams, z, t, consts, scale):
    """(1 - t) scale N([E z; t]) + z^T Q_T z, so phi(., 1) is the terminal cost.

    E (``consts["enc"]``) is a fixed input preconditioner.
    """
    inp = jnp.concatenate([consts["enc"] @ z, jnp.atleast_1d(t)])
    out = diffnet.mlp_apply(vparams, inp)
    body = out[0] if out.shape[0] == 1 else 0.5 * (out @ out) / out.shape[0]
    return (1.0 - t) * scale * body + z @ (consts["qt"] @ z)


def generator_apply(gparams, z0, t, z_scale):
    """z0 + t z_scale tanh(N([z0 / z_scale; t])): G(z0, 0) = z0 and the drift is bounded.

    Without the bound the generator runs to where H is unboundedly negative
    (large co-states) faster than the value net can follow.
    """
    inp = jnp.concatenate([z0 / z_scale, jnp.atleast_1d(t)])
    return z0 + t * z_scale * jnp.tanh(diffnet.mlp_apply(gparams, inp))


def _hamiltonian_j(z, p, consts, gamma):
    return p @ (consts["drift"] @ z) - (p @ (consts["gram"] @ p)) / (4.0 * gamma)


def _pointwise_terms(vfun, z, t, consts, gamma, horizon, probes):
    """(residual, phi_t / horizon, H, C) of the HJB at one point.

    ``probes`` of shape (k, n_res) pre-scaled by sigma selects Hutchinson;
    ``None`` takes the exact diagonal.
    """
    phi_z = jax.grad(vfun, argnums=0)
    phi_t = jax.grad(vfun, argnums=1)(z, t) / horizon
    p = phi_z(z, t)
    zonly = lambda zz: vfun(zz, t)
    if probes is None:
        trace = hessian_diag_exact(zonly, z, consts["sig2"])
    else:
        trace = hessian_trace_probes(zonly, z, probes)
    ham = _hamiltonian_j(z, p, consts, gamma)
    cost = z @ (consts["qz"] @ z)
    return phi_t + 0.5 * trace + cost + ham, phi_t, ham, cost


def _hjb_residuals(vfun, zs, ts, consts, gamma, horizon, probes):
    if probes is None:
        f = lambda z, t: _pointwise_terms(vfun, z, t, consts, gamma, horizon, None)[0]
        return jax.vmap(f)(zs, ts)
    f = lambda z, t, pr: _pointwise_terms(vfun, z, t, consts, gamma, horizon, pr)[0]
    return jax.vmap(f)(zs, ts, probes)


def _empirical_residuals(vfun, r, r_next, t, dt, consts, gamma, horizon):
    """phi(r', t + dt) - phi(r, t) + [C + H - p^T (K - I) r] * (dt * horizon)."""

    def one(z, zn, tt):
        p = jax.grad(vfun, argnums=0)(z, tt)
        ham = _hamiltonian_j(z, p, consts, gamma)
        cost = z @ (consts["qz"] @ z)
        flow = p @ (consts["drift"] @ z)
        return vfun(zn, tt + dt) - vfun(z, tt) + (cost + ham - flow) * dt * horizon

    return jax.vmap(one)(r, r_next, t)


def _generator_integrand(vfun, zs, ts, consts, gamma, horizon):
    def one(z, t):
        phi_t = jax.grad(vfun, argnums=1)(z, t) / horizon
        p = jax.grad(vfun, argnums=0)(z, t)
        return phi_t + _hamiltonian_j(z, p, consts, gamma) + z @ (consts["qz"] @ z)

    return jax.vmap(one)(zs, ts)


# policy --------------------------------------------------------------------

@dataclass
class MfgPolicy:
    value_net: DiffMlp
    generator_net: DiffMlp
    model: KoopmanModel
    graph: BrainGraph
    config: MfgConfig
    value_scale: float
    z_scale: float
    encoder: np.ndarray
    history: dict = field(default_factory=lambda: {"value_loss": [], "generator_loss": []})

    @property
    def trained(self) -> bool:
        return len(self.history["value_loss"]) > 0

    def problem(self) -> LatentProblem:
        return LatentProblem.build(self.model, self.graph, self.config)

    def value_fn(self, problem: Optional[LatentProblem] = None) -> Callable:
        problem = problem or self.problem()
        vparams = self.value_net.jax_params()
        return partial(_value_closure, vparams=vparams, consts=self.constants(problem), scale=self.value_scale)

    def constants(self, problem: LatentProblem) -> dict:
        return {**problem.jax_constants(), "enc": jnp.asarray(self.encoder)}

    def value(self, z, t) -> float:
        return float(self.value_fn()(jnp.asarray(z, dtype=float), float(t)))

    def value_gradient(self, z, t) -> np.ndarray:
        return np.asarray(_value_grad(self.value_net.jax_params(), jnp.asarray(z, dtype=float), float(t),
                                      self.constants(self.problem()), self.value_scale))

    def to_dict(self) -> dict:
        return {
            "kind": "mfg_policy",
            "config": asdict(self.config),
            "value_scale": self.value_scale,
            "z_scale": self.z_scale,
            "encoder": self.encoder.tolist(),
            "value_net": self.value_net.to_dict(),
            "generator_net": self.generator_net.to_dict(),
            "history": self.history,
            "trained": self.trained,
            "model": self.model.to_dict(),
            "graph": self.graph.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MfgPolicy":
        return cls(
            value_net=DiffMlp.from_dict(payload["value_net"]),
            generator_net=DiffMlp.from_dict(payload["generator_net"]),
            model=KoopmanModel.from_dict(payload["model"]),
            graph=BrainGraph.from_dict(payload["graph"]),
            config=MfgConfig.from_dict(payload["config"]),
            value_scale=float(payload["value_scale"]),
            z_scale=float(payload["z_scale"]),
            encoder=np.asarray(payload["encoder"], dtype=float),
            history={k: list(v) for k, v in payload["history"].items()},
        )


def _value_closure(z, t, vparams, consts, scale):
    return value_apply(vparams, z, t, consts, scale)


@jax.jit
def _value_grad(vparams, z, t, consts, scale):
    return jax.grad(value_apply, argnums=1)(vparams, z, t, consts, scale)


def optimal_control(z, t, policy: MfgPolicy, problem: Optional[LatentProblem] = None) -> np.ndarray:
    """u* = -(1 / 2 gamma) R^{-1} B^T grad_z phi(z, t)."""
    problem = problem or policy.problem()
    return control_from_costate(policy.value_gradient(z, t), problem)


# losses (numpy-facing) -------------------------------------------------------

def _probe_batch(rng, batch: int, k: int, sigma: np.ndarray) -> np.ndarray:
    return rademacher(rng, batch * k, sigma.size).reshape(batch, k, sigma.size) * sigma


def hjb_residual_loss(zs, ts, policy: MfgPolicy, problem: Optional[LatentProblem] = None,
                      probes: Optional[np.ndarray] = None) -> float:
    """mean |phi_t + 1/2 Tr(Sigma Sigma^T d2phi) + C + H|^2 over the batch."""
    problem = problem or policy.problem()
    vfun = policy.value_fn(problem)
    res = _hjb_residuals(vfun, jnp.asarray(zs, dtype=float), jnp.asarray(ts, dtype=float),
                         problem.jax_constants(), problem.gamma, problem.horizon,
                         None if probes is None else jnp.asarray(probes))
    return float(jnp.mean(res**2))


def empirical_hjb_loss(r, r_next, ts, policy: MfgPolicy, problem: Optional[LatentProblem] = None,
                       dt: Optional[float] = None) -> float:
    """Bellman residual on recorded transitions; ``dt`` is the step in normalized time."""
    problem = problem or policy.problem()
    dt = policy.config.dt / problem.horizon if dt is None else dt
    vfun = policy.value_fn(problem)
    res = _empirical_residuals(vfun, jnp.asarray(r, dtype=float), jnp.asarray(r_next, dtype=float),
                               jnp.asarray(ts, dtype=float), dt, problem.jax_constants(),
                               problem.gamma, problem.horizon)
    return float(jnp.mean(res**2))


def generator_loss(z0s, ts, policy: MfgPolicy, problem: Optional[LatentProblem] = None) -> float:
    """mean of phi_t + H + C at z_t = G(z0, t)."""
    problem = problem or policy.problem()
    consts = policy.constants(problem)
    gparams = policy.generator_net.jax_params()
    z0s = jnp.asarray(z0s, dtype=float)
    ts = jnp.asarray(ts, dtype=float)
    zt = jax.vmap(lambda z0, t: generator_apply(gparams, z0, t, policy.z_scale))(z0s, ts)
    vals = _generator_integrand(policy.value_fn(problem), zt, ts, consts, problem.gamma, problem.horizon)
    return float(jnp.mean(vals))


# training ------------------------------------------------------------------

def init_policy(model: KoopmanModel, graph: BrainGraph, config: MfgConfig) -> MfgPolicy:
    problem = LatentProblem.build(model, graph, config)
    states = model.latent_states
    z_scale = float(np.std(states)) or 1.0
    if config.value_scale > 0:
        value_scale = float(config.value_scale)
    else:
        costs = np.einsum("it,ij,jt->t", states, problem.latent_cost, states)
        value_scale = float(config.horizon * np.mean(costs)) or 1.0
    n_res = model.n_res
    value_net = init_mlp([n_res + 1, *config.hidden, config.value_width], config.seed)
    last_w, last_b = value_net.params[-1]
    value_net = value_net.with_params([*value_net.params[:-1], (config.output_init * last_w, last_b)])
    generator_net = init_mlp([n_res + 1, *config.hidden, n_res], config.seed + 1)
    return MfgPolicy(value_net, generator_net, model, graph, config, value_scale, z_scale,
                     input_encoder(states, config.whiten, z_scale))


def input_encoder(states: np.ndarray, whiten: bool, z_scale: float, floor: float = 1e-3) -> np.ndarray:
    """Linear map applied to z before the value net.

    Whitening uses the uncentred second moment of the recorded states, with
    eigenvalues floored at ``floor`` times the largest so that directions the
    data never visits are not amplified without bound.
    """
    n = states.shape[0]
    if not whiten:
        return np.eye(n) / z_scale
    second = states @ states.T / states.shape[1]
    lam, vec = np.linalg.eigh(second)
    lam = np.maximum(lam, floor * lam.max())
    return (vec / np.sqrt(lam)).T


def loss_unit(value_scale: float, horizon: float) -> float:
    return max(value_scale / horizon, 1e-12)


def _make_steps(problem: LatentProblem, config: MfgConfig, value_scale: float, z_scale: float,
                encoder: np.ndarray):
    consts = {**problem.jax_constants(), "enc": jnp.asarray(encoder)}
    gamma, horizon = problem.gamma, problem.horizon
    dt = config.dt / horizon
    exact = config.hutchinson_k == 0
    # residuals are measured in units of the typical running cost per sample;
    # a constant rescale leaves the Adam trajectory's minimizer unchanged but
    # keeps the divergence guard meaningful across problem scales
    unit = loss_unit(value_scale, horizon)

    def vfun_of(vparams):
        return lambda z, t: value_apply(vparams, z, t, consts, value_scale)

    def value_loss(vparams, zs, ts, probes, r, rn, tr):
        vfun = vfun_of(vparams)
        res = _hjb_residuals(vfun, zs, ts, consts, gamma, horizon, None if exact else probes)
        loss = jnp.mean((res / unit) ** 2)
        if config.real_weight > 0:
            emp = _empirical_residuals(vfun, r, rn, tr, dt, consts, gamma, horizon)
            loss = loss + config.real_weight * jnp.mean((emp / (unit * dt * horizon)) ** 2)
        return loss

    def gen_loss(gparams, vparams, z0s, ts):
        zt = jax.vmap(lambda z0, t: generator_apply(gparams, z0, t, z_scale))(z0s, ts)
        return jnp.mean(_generator_integrand(vfun_of(vparams), zt, ts, consts, gamma, horizon)) / unit

    @jax.jit
    def value_step(vparams, m, v, step, z0s, ts, probes, r, rn, tr, gparams):
        zt = jax.vmap(lambda z0, t: generator_apply(gparams, z0, t, z_scale))(z0s, ts)
        loss, grads = jax.value_and_grad(value_loss)(vparams, zt, ts, probes, r, rn, tr)
        vparams, m, v = adam_update(vparams, grads, m, v, step, config.lr_value, 0.9, 0.999, 1e-8)
        return vparams, m, v, loss

    @jax.jit
    def gen_step(gparams, m, v, step, vparams, z0s, ts):
        loss, grads = jax.value_and_grad(gen_loss)(gparams, vparams, z0s, ts)
        gparams, m, v = adam_update(gparams, grads, m, v, step, config.lr_generator, 0.9, 0.999, 1e-8)
        return gparams, m, v, loss

    return value_step, gen_step


def sample_initial(rng: np.random.Generator, states: np.ndarray, batch: int, p_real: float) -> np.ndarray:
    """Mixture of recorded latent columns and N(0, s^2 I) draws, s the pooled latent std."""
    n_res, m = states.shape
    from_real = rng.random(batch) < p_real
    cols = rng.integers(0, m, size=batch)
    noise = rng.standard_normal((batch, n_res)) * np.std(states)
    return np.where(from_real[:, None], states[:, cols].T, noise)


def train(model: KoopmanModel, graph: BrainGraph, config: MfgConfig,
          real_pairs: Optional[tuple[np.ndarray, np.ndarray]] = None,
          policy: Optional[MfgPolicy] = None,
          callback: Optional[Callable[[int, float, float], None]] = None) -> MfgPolicy:
    """Alternate value and generator updates for ``config.n_iter`` iterations.

    ``real_pairs`` defaults to the model's recorded (R_curr, R_next).
    """
    policy = policy or init_policy(model, graph, config)
    problem = LatentProblem.build(model, graph, config)
    r_curr, r_next = real_pairs if real_pairs is not None else (model.r_curr, model.r_next)
    states = model.latent_states
    rng = np.random.default_rng(config.seed)
    value_step, gen_step = _make_steps(problem, config, policy.value_scale, policy.z_scale, policy.encoder)

    vparams = policy.value_net.jax_params()
    gparams = policy.generator_net.jax_params()
    zeros = lambda tree: jax.tree_util.tree_map(jnp.zeros_like, tree)
    vm, vv, gm, gv = zeros(vparams), zeros(vparams), zeros(gparams), zeros(gparams)
    history = {"value_loss": list(policy.history["value_loss"]),
               "generator_loss": list(policy.history["generator_loss"])}
    start = len(history["value_loss"])
    bsz = config.batch_size
    probe_k = max(config.hutchinson_k, 1)
    dt = config.dt / problem.horizon
    n_pairs = r_curr.shape[1]

    for i in range(config.n_iter):
        step = start + i + 1
        z0s = sample_initial(rng, states, bsz, config.p_real)
        ts = rng.random(bsz)
        probes = _probe_batch(rng, bsz, probe_k, problem.sigma)
        cols = rng.integers(0, n_pairs, size=bsz)
        tr = rng.random(bsz) * max(1.0 - dt, 0.0)
        vparams, vm, vv, vloss = value_step(
            vparams, vm, vv, step, jnp.asarray(z0s), jnp.asarray(ts), jnp.asarray(probes),
            jnp.asarray(r_curr[:, cols].T), jnp.asarray(r_next[:, cols].T), jnp.asarray(tr), gparams)
        z0g = sample_initial(rng, states, bsz, config.p_real)
        tg = rng.random(bsz)
        gparams, gm, gv, gloss = gen_step(gparams, gm, gv, step, vparams, jnp.asarray(z0g), jnp.asarray(tg))
        vloss, gloss = float(vloss), float(gloss)
        for name, value in (("value", vloss), ("generator", gloss)):
            if not math.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
                raise NumericError(f"training diverged at iteration {start + i}: {name} loss = {value:.4g}")
        history["value_loss"].append(vloss)
        history["generator_loss"].append(gloss)
        if callback is not None:
            callback(start + i, vloss, gloss)

    return MfgPolicy(policy.value_net.with_params(vparams), policy.generator_net.with_params(gparams),
                     model, graph, config, policy.value_scale, policy.z_scale, policy.encoder, history)


# closed loop ---------------------------------------------------------------

@dataclass
class ControlRun:
    latent: np.ndarray            # n_res x (steps + 1)
    physical: np.ndarray          # n x (steps + 1)
    controls: np.ndarray          # k x steps
    reference_latent: np.ndarray  # uncontrolled, same noise path
    reference_physical: np.ndarray
    metrics: dict
    mode: str = "controlled"
    noise_seed: int = 0

    def to_dict(self, include_latent: bool = False) -> dict:
        payload = {
            "mode": self.mode,
            "noise_seed": self.noise_seed,
            "physical": self.physical.tolist(),
            "controls": self.controls.tolist(),
            "reference_physical": self.reference_physical.tolist(),
            "metrics": self.metrics,
        }
        if include_latent:
            payload["latent"] = self.latent.tolist()
            payload["reference_latent"] = self.reference_latent.tolist()
        return payload


def simulate(problem: LatentProblem, z0, steps: int, controller: Optional[Callable], noise: np.ndarray,
             dt: float = 1.0):
    """Euler-Maruyama: z += [(K - I) z + B u] dt + Sigma sqrt(dt) xi.

    ``controller(step, z)`` returns u or None for the uncontrolled system.
    """
    z = np.array(z0, dtype=float)
    latent = np.empty((problem.n_res, steps + 1))
    controls = np.zeros((problem.k, steps))
    latent[:, 0] = z
    for s in range(steps):
        u = np.zeros(problem.k) if controller is None else np.asarray(controller(s, z), dtype=float)
        controls[:, s] = u
        z = z + (problem.drift @ z + problem.b @ u) * dt + problem.sigma * math.sqrt(dt) * noise[s]
        if not np.all(np.isfinite(z)):
            raise NumericError(f"closed-loop state became non-finite at step {s}")
        latent[:, s + 1] = z
    return latent, controls


def noise_path(noise_seed: int, steps: int, n_res: int) -> np.ndarray:
    return np.random.default_rng(noise_seed).standard_normal((steps, n_res))


def run_metrics(physical: np.ndarray, reference: np.ndarray, controls: np.ndarray,
                healthy: Optional[np.ndarray]) -> dict:
    var_ref = float(np.var(reference))
    du = np.abs(np.diff(controls, axis=1))
    u_std = float(np.std(controls))
    out = {
        "amplitude_variance_ratio": float(np.var(physical)) / var_ref if var_ref > 0 else float("nan"),
        "control_total_variation": float(du.sum()),
        "control_mean_abs_step": float(du.mean()) if du.size else 0.0,
        "control_std": u_std,
        "control_smoothness": float(du.mean()) / u_std if u_std > 0 and du.size else 0.0,
        "w1_vs_healthy_controlled": None,
        "w1_vs_healthy_uncontrolled": None,
    }
    if healthy is not None:
        out["w1_vs_healthy_controlled"] = wasserstein1(physical, healthy)
        out["w1_vs_healthy_uncontrolled"] = wasserstein1(reference, healthy)
    return out


def feedback(policy: MfgPolicy, problem: Optional[LatentProblem] = None) -> Callable:
    """controller(step, z) for ``simulate``; step maps to t = step * dt / horizon."""
    problem = problem or policy.problem()
    consts = policy.constants(problem)
    vparams = policy.value_net.jax_params()
    scale = policy.value_scale
    dt = policy.config.dt / problem.horizon

    def controller(step, z):
        t = min(step * dt, 1.0)
        p = np.asarray(_value_grad(vparams, jnp.asarray(z), t, consts, scale))
        return control_from_costate(p, problem)

    return controller


def rollout(policy: MfgPolicy, z0, steps: int, mode: str = "controlled", noise_seed: int = 0,
            healthy: Optional[np.ndarray] = None) -> ControlRun:
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if mode not in ("controlled", "uncontrolled"):
        raise ConfigError(f"unknown rollout mode {mode!r}")
    problem = policy.problem()
    noise = noise_path(noise_seed, steps, problem.n_res)
    dt = policy.config.dt
    ref, _ = simulate(problem, z0, steps, None, noise, dt)
    if mode == "controlled":
        latent, controls = simulate(problem, z0, steps, feedback(policy, problem), noise, dt)
    else:
        latent, controls = ref.copy(), np.zeros((problem.k, steps))
    physical = problem.w_out @ latent
    reference = problem.w_out @ ref
    return ControlRun(latent, physical, controls, ref, reference,
                      run_metrics(physical, reference, controls, healthy), mode, noise_seed)
