"""Echo-state lifting and a closed-form linear latent surrogate.

Signals are pushed through a frozen leaky reservoir driven by the current
sample, its graph-neighbour aggregate and a few delayed copies. A ridge fit then
gives the latent transition K (clamped to spectral radius <= 1) and the readout
back to channel space.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
import scipy.linalg

from .connectivity import BrainGraph
from .errors import ConfigError, DataError, NumericError
from .graphsel import ControlMatrix
from .metrics import rmse, wasserstein1
from .synthgen import SignalMatrix


@dataclass
class ReservoirConfig:
    n_res: int = 200
    alpha: float = 0.3
    density: float = 0.05
    res_spectral_radius: float = 0.9
    input_scale: float = 0.5
    tau: int = 2
    washout: int = 50
    ridge: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.n_res < 1:
            raise ConfigError("n_res must be >= 1")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0 < self.density <= 1:
            raise ConfigError("density must lie in (0, 1]")
        if self.res_spectral_radius < 0:
            raise ConfigError("res_spectral_radius must be >= 0")
        if self.tau < 0 or self.washout < 0:
            raise ConfigError("tau and washout must be >= 0")
        if self.ridge < 0:
            raise ConfigError("ridge must be >= 0")

    @classmethod
    def from_dict(cls, values: dict) -> "ReservoirConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown koopman keys: {sorted(unknown)}")
        return cls(**values)


def init_reservoir(config: ReservoirConfig, d_in: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (W_in, W_res). W_res is sparse uniform rescaled to the target radius."""
    rng = np.random.default_rng(config.seed)
    n = config.n_res
    w_res = rng.uniform(-1.0, 1.0, size=(n, n))
    w_res *= rng.random((n, n)) < config.density
    radius = np.max(np.abs(np.linalg.eigvals(w_res))) if n > 0 else 0.0
    if radius > 0:
        w_res *= config.res_spectral_radius / radius
    w_in = rng.uniform(-config.input_scale, config.input_scale, size=(n, d_in))
    return w_in, w_res


def build_input(data: np.ndarray, adjacency: np.ndarray, t: int, tau: int) -> np.ndarray:
    """[x_t; A x_t; x_{t-1}; ...; x_{t-tau}]."""
    if t < tau:
        raise DataError(f"t={t} must be >= tau={tau}")
    x_t = data[:, t]
    parts = [x_t, adjacency @ x_t] + [data[:, t - d] for d in range(1, tau + 1)]
    return np.concatenate(parts)


def reservoir_states(data, adjacency, w_in, w_res, alpha: float, tau: int) -> np.ndarray:
    """Latent state after consuming each input u_in(t), t = tau .. T-1.

    Column j belongs to data time tau + j; the state before the first input is 0.
    """
    data = np.asarray(data, dtype=float)
    n_res = w_res.shape[0]
    n_t = data.shape[1]
    if n_t <= tau:
        raise DataError(f"need more than tau={tau} samples, got {n_t}")
    coupled = adjacency @ data
    r = np.zeros(n_res)
    out = np.empty((n_res, n_t - tau))
    for t in range(tau, n_t):
        u = np.concatenate([data[:, t], coupled[:, t]] + [data[:, t - d] for d in range(1, tau + 1)])
        r = (1.0 - alpha) * r + alpha * np.tanh(w_in @ u + w_res @ r)
        out[:, t - tau] = r
    return out


def run_reservoir(signals: SignalMatrix, graph: BrainGraph, config: ReservoirConfig,
                  w_in: Optional[np.ndarray] = None, w_res: Optional[np.ndarray] = None):
    """(R_curr, R_next) after washout; both n_res x (T - washout - tau - 1)."""
    n = signals.n_channels
    if graph.n != n:
        raise DataError(f"graph has {graph.n} nodes, signals have {n} channels")
    if w_in is None or w_res is None:
        w_in, w_res = init_reservoir(config, n * (2 + config.tau))
    usable = signals.n_samples - config.tau
    if config.washout >= usable - 1:
        raise DataError(
            f"washout={config.washout} leaves no transitions from {usable} usable samples"
        )
    states = reservoir_states(signals.data, graph.adjacency, w_in, w_res, config.alpha, config.tau)
    states = states[:, config.washout:]
    return states[:, :-1], states[:, 1:]


def fit_ridge(inputs: np.ndarray, targets: np.ndarray, ridge: float) -> np.ndarray:
    """M minimizing ||targets - M inputs||_F^2 + ridge ||M||_F^2 via Cholesky."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if inputs.shape[1] != targets.shape[1]:
        raise DataError("inputs and targets need the same number of columns")
    gram = inputs @ inputs.T
    if ridge > 0:
        gram[np.diag_indices_from(gram)] += ridge
    elif np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise NumericError("normal matrix is singular with ridge=0; use ridge > 0")
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"normal matrix factorization failed ({exc}); use ridge > 0") from None
    return scipy.linalg.cho_solve(factor, inputs @ targets.T).T


def fit_transition(r_curr, r_next, ridge: float) -> np.ndarray:
    return fit_ridge(r_curr, r_next, ridge)


def fit_readout(r_curr, x_target, ridge: float) -> np.ndarray:
    return fit_ridge(r_curr, x_target, ridge)


def spectral_radius(k: np.ndarray) -> float:
    try:
        eig = np.linalg.eigvals(k)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigenvalue computation failed: {exc}") from None
    return float(np.max(np.abs(eig)))


def stabilize(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise DataError("transition matrix must be square")
    rho = spectral_radius(k)
    return k / rho if rho > 1.0 else k.copy()


def project_control(w_in: np.ndarray, b_phys: np.ndarray, n: int, tau: int) -> np.ndarray:
    """Map physical actuation through the current-sample block of W_in only."""
    b_phys = np.asarray(b_phys, dtype=float)
    if b_phys.shape != (n, n):
        raise DataError(f"b_phys must be {n}x{n}, got {b_phys.shape}")
    if w_in.shape[1] != n * (2 + tau):
        raise DataError(f"w_in has {w_in.shape[1]} columns, expected {n * (2 + tau)}")
    return w_in[:, :n] @ b_phys


@dataclass
class KoopmanModel:
    config: ReservoirConfig
    w_in: np.ndarray
    w_res: np.ndarray
    k: np.ndarray
    w_out: np.ndarray
    b_latent: np.ndarray
    actuated: list[int]
    adjacency: np.ndarray
    sigma: np.ndarray
    latent_states: np.ndarray
    spectral_radius_k: float

    @property
    def n(self) -> int:
        return self.w_out.shape[0]

    @property
    def n_res(self) -> int:
        return self.k.shape[0]

    @property
    def alpha(self) -> float:
        return self.config.alpha

    @property
    def tau(self) -> int:
        return self.config.tau

    @property
    def washout(self) -> int:
        return self.config.washout

    @property
    def b_actuated(self) -> np.ndarray:
        """n_res x k block acting on the selected nodes."""
        return self.b_latent[:, self.actuated]

    @property
    def r_curr(self) -> np.ndarray:
        return self.latent_states[:, :-1]

    @property
    def r_next(self) -> np.ndarray:
        return self.latent_states[:, 1:]

    @classmethod
    def from_matrices(cls, k, b_latent, w_out, latent_states, sigma=None, adjacency=None,
                      actuated=None) -> "KoopmanModel":
        """A surrogate with no reservoir behind it, for hand-built linear problems."""
        k = np.asarray(k, dtype=float)
        b_latent = np.atleast_2d(np.asarray(b_latent, dtype=float))
        w_out = np.atleast_2d(np.asarray(w_out, dtype=float))
        n_res, n = k.shape[0], w_out.shape[0]
        if k.shape != (n_res, n_res) or b_latent.shape[0] != n_res or w_out.shape[1] != n_res:
            raise DataError("inconsistent K, B_latent, W_out shapes")
        actuated = list(range(b_latent.shape[1])) if actuated is None else [int(i) for i in actuated]
        config = ReservoirConfig(n_res=n_res, tau=0, washout=0)
        return cls(
            config=config,
            w_in=np.zeros((n_res, 2 * n)),
            w_res=np.zeros((n_res, n_res)),
            k=k,
            w_out=w_out,
            b_latent=b_latent,
            actuated=actuated,
            adjacency=np.zeros((n, n)) if adjacency is None else np.asarray(adjacency, dtype=float),
            sigma=np.zeros(n_res) if sigma is None else np.asarray(sigma, dtype=float),
            latent_states=np.asarray(latent_states, dtype=float),
            spectral_radius_k=spectral_radius(k),
        )

    def encode(self, signals: SignalMatrix | np.ndarray) -> np.ndarray:
        """Reservoir states for a record; column j belongs to sample tau + j."""
        data = signals.data if isinstance(signals, SignalMatrix) else np.asarray(signals, dtype=float)
        if data.shape[0] != self.n:
            raise DataError(f"model expects {self.n} channels, got {data.shape[0]}")
        return reservoir_states(data, self.adjacency, self.w_in, self.w_res, self.alpha, self.tau)

    def to_dict(self, matrices_inline: bool = False) -> dict:
        payload = {
            "kind": "koopman_model",
            "n": self.n,
            "n_res": self.n_res,
            "seed": self.config.seed,
            "config": asdict(self.config),
            "actuated": list(self.actuated),
            "spectral_radius_k": self.spectral_radius_k,
            "matrices_inline": matrices_inline,
            "adjacency": self.adjacency.tolist(),
            "k": self.k.tolist(),
            "w_out": self.w_out.tolist(),
            "b_latent": self.b_latent.tolist(),
            "sigma": self.sigma.tolist(),
            "latent_states": self.latent_states.tolist(),
        }
        if matrices_inline:
            payload["w_in"] = self.w_in.tolist()
            payload["w_res"] = self.w_res.tolist()
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "KoopmanModel":
        config = ReservoirConfig.from_dict(payload["config"])
        n = int(payload["n"])
        if payload.get("matrices_inline"):
            w_in = np.asarray(payload["w_in"], dtype=float)
            w_res = np.asarray(payload["w_res"], dtype=float)
        else:
            w_in, w_res = init_reservoir(config, n * (2 + config.tau))
        return cls(
            config=config,
            w_in=w_in,
            w_res=w_res,
            k=np.asarray(payload["k"], dtype=float),
            w_out=np.asarray(payload["w_out"], dtype=float),
            b_latent=np.asarray(payload["b_latent"], dtype=float),
            actuated=[int(i) for i in payload["actuated"]],
            adjacency=np.asarray(payload["adjacency"], dtype=float),
            sigma=np.asarray(payload["sigma"], dtype=float),
            latent_states=np.asarray(payload["latent_states"], dtype=float),
            spectral_radius_k=float(payload["spectral_radius_k"]),
        )


def fit_koopman(signals: SignalMatrix, graph: BrainGraph, control: ControlMatrix,
                config: ReservoirConfig) -> KoopmanModel:
    n = signals.n_channels
    if control.n != n:
        raise DataError(f"control matrix is {control.n}x{control.n}, signals have {n} channels")
    w_in, w_res = init_reservoir(config, n * (2 + config.tau))
    r_curr, r_next = run_reservoir(signals, graph, config, w_in, w_res)
    k = stabilize(fit_transition(r_curr, r_next, config.ridge))
    first = config.tau + config.washout
    x_target = signals.data[:, first:first + r_curr.shape[1]]
    w_out = fit_readout(r_curr, x_target, config.ridge)
    b_latent = project_control(w_in, control.b_phys, n, config.tau)
    sigma = np.std(r_next - k @ r_curr, axis=1)
    states = np.concatenate([r_curr, r_next[:, -1:]], axis=1)
    return KoopmanModel(config, w_in, w_res, k, w_out, b_latent, list(control.actuated),
                        graph.adjacency.copy(), sigma, states, spectral_radius(k))


def forecast(model: KoopmanModel, z0: np.ndarray, steps: int):
    """Free run z_{t+1} = K z_t. Returns (latent, physical), each with z0 as column 0."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (model.n_res,):
        raise DataError(f"initial state must have length {model.n_res}")
    z = np.empty((model.n_res, steps + 1))
    z[:, 0] = z0
    for t in range(steps):
        z[:, t + 1] = model.k @ z[:, t]
    return z, model.w_out @ z


def one_step_predictions(model: KoopmanModel, states: np.ndarray) -> np.ndarray:
    """x_hat_{t+1} = W_out K h_t for every column of ``states``."""
    return model.w_out @ (model.k @ states)


def metrics(true, pred) -> dict:
    true = true.data if isinstance(true, SignalMatrix) else np.asarray(true, dtype=float)
    pred = pred.data if isinstance(pred, SignalMatrix) else np.asarray(pred, dtype=float)
    if true.shape != pred.shape:
        raise DataError(f"shape mismatch {true.shape} vs {pred.shape}")
    return {
        "rmse_global": rmse(true, pred),
        "rmse_per_channel": [rmse(a, b) for a, b in zip(true, pred)],
        "w1_global": wasserstein1(true, pred),
        "w1_per_channel": [wasserstein1(a, b) for a, b in zip(true, pred)],
    }
