"""Distributional and pointwise error measures."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def wasserstein1(a, b) -> float:
    """1-D earth mover's distance between two empirical samples.

    Equal sizes reduce to the mean absolute difference of order statistics;
    otherwise the quantile functions are integrated over the merged grid of
    their jump points.
    """
    a = np.sort(np.ravel(np.asarray(a, dtype=float)))
    b = np.sort(np.ravel(np.asarray(b, dtype=float)))
    if a.size == 0 or b.size == 0:
        raise DataError("Wasserstein distance needs nonempty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    grid = np.union1d(np.arange(1, a.size + 1) / a.size, np.arange(1, b.size + 1) / b.size)
    grid = np.concatenate([[0.0], grid])
    grid[-1] = 1.0
    widths = np.diff(grid)
    mid = 0.5 * (grid[1:] + grid[:-1])
    qa = a[np.minimum((mid * a.size).astype(int), a.size - 1)]
    qb = b[np.minimum((mid * b.size).astype(int), b.size - 1)]
    return float(np.sum(np.abs(qa - qb) * widths))


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def density_histogram(samples, edges) -> np.ndarray:
    counts, _ = np.histogram(np.ravel(samples), bins=edges)
    total = counts.sum()
    if total == 0:
        return np.zeros(len(edges) - 1)
    return counts / (total * np.diff(edges))


def symmetric_edges(pooled, bins: int = 100, mass: float = 0.995) -> np.ndarray:
    """Bin edges on [-c, c] with c the ``mass`` quantile of |pooled|."""
    c = float(np.quantile(np.abs(np.ravel(pooled)), mass))
    if c <= 0:
        c = 1.0
    return np.linspace(-c, c, bins + 1)
