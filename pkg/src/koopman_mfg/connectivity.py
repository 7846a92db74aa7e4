"""Phase-locking functional graph and the Laplacian-weighted state cost."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .synthgen import SignalMatrix, check_window


@dataclass(frozen=True)
class BrainGraph:
    adjacency: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray
    threshold_used: float

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_adjacency(cls, adjacency, threshold_used: float = 0.0) -> "BrainGraph":
        adj = np.array(adjacency, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise DataError(f"adjacency must be square, got shape {adj.shape}")
        if not np.all(np.isfinite(adj)):
            raise DataError("adjacency has non-finite entries")
        if not np.allclose(adj, adj.T, atol=1e-12, rtol=0):
            raise DataError("adjacency must be symmetric")
        if np.any(adj < 0) or np.any(adj > 1 + 1e-12):
            raise DataError("adjacency weights must lie in [0, 1]")
        np.fill_diagonal(adj, 0.0)
        degree = np.diag(adj.sum(axis=1))
        return cls(adj, degree, degree - adj, float(threshold_used))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "adjacency": self.adjacency.tolist(),
            "laplacian": self.laplacian.tolist(),
            "threshold_used": self.threshold_used,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "BrainGraph":
        n = int(payload["n"])
        adj = np.asarray(payload["adjacency"], dtype=float).reshape(n, n)
        return cls.from_adjacency(adj, payload.get("threshold_used", 0.0))


def analytic_signal(x: np.ndarray) -> np.ndarray:
    """Frequency-domain analytic signal along the last axis.

    Negative-frequency bins are zeroed and positive bins doubled; DC and (for
    even lengths) Nyquist keep unit weight.
    """
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    if m < 4:
        raise DataError(f"analytic signal needs at least 4 samples, got {m}")
    if not np.all(np.isfinite(x)):
        raise DataError("analytic signal input has non-finite values")
    h = np.zeros(m)
    h[0] = 1.0
    if m % 2 == 0:
        h[m // 2] = 1.0
        h[1 : m // 2] = 2.0
    else:
        h[1 : (m + 1) // 2] = 2.0
    return np.fft.ifft(np.fft.fft(x, axis=-1) * h, axis=-1)


def analytic_phase(x: np.ndarray) -> np.ndarray:
    """Wrapped instantaneous phase in (-pi, pi]."""
    z = analytic_signal(x)
    return np.arctan2(z.imag, z.real)


def plv_from_phases(phases: np.ndarray) -> np.ndarray:
    """|mean_k exp(j(phi_i - phi_j))| for every channel pair; diagonal is 1."""
    phasors = np.exp(1j * phases)
    plv = np.abs(phasors @ phasors.conj().T) / phases.shape[1]
    plv = 0.5 * (plv + plv.T)
    np.fill_diagonal(plv, 1.0)
    return np.clip(plv, 0.0, 1.0)


def plv_matrix(signals: SignalMatrix | np.ndarray, window: tuple[int, int] | None = None) -> np.ndarray:
    """PLV over samples [a, b). Phases come from the whole record, then get sliced."""
    data = signals.data if isinstance(signals, SignalMatrix) else np.asarray(signals, dtype=float)
    a, b = (0, data.shape[1]) if window is None else (int(window[0]), int(window[1]))
    check_window(a, b, data.shape[1])
    if b - a < 8:
        raise DataError(f"PLV window needs at least 8 samples, got {b - a}")
    phases = analytic_phase(data)[:, a:b]
    return plv_from_phases(phases)


def parse_threshold(spec: str) -> tuple[str, float]:
    """'abs:0.4' or 'pct:90' -> (mode, value)."""
    try:
        mode, value = spec.split(":")
        value = float(value)
    except ValueError:
        raise ConfigError(f"threshold must look like abs:0.4 or pct:90, got {spec!r}") from None
    mode = {"abs": "absolute", "absolute": "absolute", "pct": "percentile", "percentile": "percentile"}.get(mode)
    if mode is None:
        raise ConfigError(f"unknown threshold mode in {spec!r}")
    return mode, value


def threshold_adjacency(full: np.ndarray, mode: str = "absolute", value: float = 0.4) -> BrainGraph:
    """Zero every weight at or below the cutoff and build the graph matrices.

    ``absolute``: cutoff is ``value`` itself.
    ``percentile``: keeps the ceil((100 - p)% ) largest upper-triangle weights;
    ties at the cutoff value are dropped.
    """
    full = np.asarray(full, dtype=float)
    if full.ndim != 2 or full.shape[0] != full.shape[1]:
        raise DataError("PLV matrix must be square")
    if not np.allclose(full, full.T, atol=1e-12, rtol=0):
        raise DataError("PLV matrix must be symmetric")
    if np.any(full < -1e-12) or np.any(full > 1 + 1e-12):
        raise DataError("PLV entries must lie in [0, 1]")
    full = np.clip(full, 0.0, 1.0)
    n = full.shape[0]
    off = ~np.eye(n, dtype=bool)
    if mode == "absolute":
        if not 0 <= value < 1:
            raise ConfigError(f"absolute threshold must lie in [0, 1), got {value}")
        cutoff = float(value)
    elif mode == "percentile":
        if not 0 < value < 100:
            raise ConfigError(f"percentile must lie in (0, 100), got {value}")
        upper = np.sort(full[np.triu_indices(n, k=1)])
        m = upper.size
        keep = min(m, math.ceil(round((100.0 - value) * m / 100.0, 9)))
        cutoff = float(upper[m - keep - 1]) if keep < m else -np.inf
    else:
        raise ConfigError(f"unknown threshold mode {mode!r}")
    adj = np.where(off & (full > cutoff), full, 0.0)
    used = cutoff if math.isfinite(cutoff) else 0.0
    return BrainGraph.from_adjacency(adj, threshold_used=used)


def cost_matrix(graph: BrainGraph, quadratic_form: bool = False) -> np.ndarray:
    """Matrix Q with state_cost(x) = x^T Q x.

    Default is (I+L)^T (I+L); ``quadratic_form`` selects the unsquared I+L.
    """
    m = np.eye(graph.n) + graph.laplacian
    return m if quadratic_form else m.T @ m


def state_cost(x: np.ndarray, graph: BrainGraph, quadratic_form: bool = False) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (graph.n,):
        raise DataError(f"state has shape {x.shape}, graph has {graph.n} nodes")
    if quadratic_form:
        return float(x @ (x + graph.laplacian @ x))
    y = x + graph.laplacian @ x
    return float(y @ y)
