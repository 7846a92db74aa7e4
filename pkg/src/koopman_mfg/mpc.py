"""Receding-horizon linear-quadratic baseline on the same latent surrogate.

Each plan minimizes sum_{k=1..H} C(W_out z_k) + gamma u_{k-1}^T R u_{k-1} along
the noise-free prediction z_{k+1} = K z_k + B u_k. The problem is condensed onto
the stacked control vector and solved through its normal equations; because the
dynamics are time invariant the resulting linear gain is computed once.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import scipy.linalg

from .connectivity import BrainGraph
from .errors import ConfigError, DataError, NumericError
from .koopman import KoopmanModel
from .mfg import ControlRun, LatentProblem, MfgConfig, noise_path, run_metrics, simulate


@dataclass
class MpcConfig:
    horizon: int = 10
    gamma: float = 1000.0
    r: Optional[list] = None
    u_max: Optional[float] = None
    replan_every: int = 1
    # rollout settings, shared with the value-based controller for paired comparisons
    sigma: float = 1.0
    dt: float = 1.0
    quadratic_form: bool = False

    def __post_init__(self):
        self.horizon = int(self.horizon)
        self.replan_every = int(self.replan_every)
        if self.horizon < 1:
            raise ConfigError("MPC horizon must be >= 1")
        if not 1 <= self.replan_every <= self.horizon:
            raise ConfigError("replan_every must lie in [1, horizon]")
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if self.u_max is not None and not self.u_max > 0:
            raise ConfigError("u_max must be > 0 when set")
        if self.sigma < 0 or self.dt <= 0:
            raise ConfigError("sigma must be >= 0 and dt > 0")

    def problem(self, model: KoopmanModel, graph: BrainGraph) -> LatentProblem:
        shared = MfgConfig(gamma=self.gamma, r=self.r, sigma=self.sigma, dt=self.dt,
                           quadratic_form=self.quadratic_form)
        return LatentProblem.build(model, graph, shared)

    @classmethod
    def from_dict(cls, values: dict) -> "MpcConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown mpc keys: {sorted(unknown)}")
        return cls(**values)


def condensed(k: np.ndarray, b: np.ndarray, horizon: int):
    """(Phi, Gamma) with stacked [z_1; ...; z_H] = Phi z_0 + Gamma [u_0; ...; u_{H-1}]."""
    n, m = b.shape
    phi = np.empty((horizon * n, n))
    gamma = np.zeros((horizon * n, horizon * m))
    power = np.eye(n)
    impulse = [b]
    for i in range(horizon):
        power = k @ power
        phi[i * n:(i + 1) * n] = power
        if i > 0:
            impulse.append(k @ impulse[-1])
        for j in range(i + 1):
            gamma[i * n:(i + 1) * n, j * m:(j + 1) * m] = impulse[i - j]
    return phi, gamma


class Planner:
    """Precomputed gain F so that the unconstrained plan is U = -F z_0."""

    def __init__(self, problem: LatentProblem, k: np.ndarray, horizon: int, u_max: Optional[float] = None):
        self.problem = problem
        self.horizon = horizon
        self.u_max = u_max
        self.k = k
        phi, gam = condensed(k, problem.b, horizon)
        q = problem.latent_cost
        qg = np.concatenate([q @ gam[i * q.shape[0]:(i + 1) * q.shape[0]] for i in range(horizon)])
        hess = gam.T @ qg + problem.gamma * np.kron(np.eye(horizon), problem.r)
        hess = 0.5 * (hess + hess.T)
        try:
            factor = scipy.linalg.cho_factor(hess, lower=True)
        except np.linalg.LinAlgError:
            raise NumericError("condensed MPC Hessian is not positive definite") from None
        self.gain = scipy.linalg.cho_solve(factor, qg.T @ phi)
        if not np.all(np.isfinite(self.gain)):
            raise NumericError("condensed MPC gain is non-finite")

    def plan(self, z0) -> np.ndarray:
        u = -(self.gain @ np.asarray(z0, dtype=float)).reshape(self.horizon, self.problem.k)
        if self.u_max is not None:
            u = np.clip(u, -self.u_max, self.u_max)
        return u


def planner(model: KoopmanModel, graph: BrainGraph, config: MpcConfig) -> Planner:
    return Planner(config.problem(model, graph), model.k, config.horizon, config.u_max)


def plan(z0, model: KoopmanModel, graph: BrainGraph, config: MpcConfig) -> np.ndarray:
    """H x k control sequence for the deterministic prediction from z0."""
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (model.n_res,):
        raise DataError(f"initial state must have length {model.n_res}")
    return planner(model, graph, config).plan(z0)


def objective(z0, controls, model: KoopmanModel, graph: BrainGraph, config: MpcConfig) -> float:
    """Planning cost of an H x k sequence under the noise-free prediction."""
    problem = config.problem(model, graph)
    z = np.asarray(z0, dtype=float)
    total = 0.0
    for u in np.atleast_2d(controls):
        total += config.gamma * float(u @ problem.r @ u)
        z = model.k @ z + problem.b @ u
        total += float(z @ problem.latent_cost @ z)
    return total


def mpc_rollout(model: KoopmanModel, graph: BrainGraph, config: MpcConfig, z0, steps: int,
                noise_seed: int = 0, healthy: Optional[np.ndarray] = None) -> ControlRun:
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    pl = planner(model, graph, config)
    problem = pl.problem
    noise = noise_path(noise_seed, steps, problem.n_res)
    queue: list[np.ndarray] = []

    def controller(step, z):
        if step % config.replan_every == 0:
            queue[:] = list(pl.plan(z)[:config.replan_every])
        return queue.pop(0)

    ref, _ = simulate(problem, z0, steps, None, noise, config.dt)
    latent, controls = simulate(problem, z0, steps, controller, noise, config.dt)
    physical = problem.w_out @ latent
    reference = problem.w_out @ ref
    return ControlRun(latent, physical, controls, ref, reference,
                      run_metrics(physical, reference, controls, healthy), "mpc", noise_seed)
