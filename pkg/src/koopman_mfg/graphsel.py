"""Centrality-ranked actuator selection for pinning control."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import networkx as nx
import numpy as np

from .connectivity import BrainGraph
from .errors import ConfigError, DataError, NumericError


@dataclass(frozen=True)
class CentralityReport:
    degree: np.ndarray
    betweenness: np.ndarray
    eigenvector: np.ndarray
    combined: np.ndarray
    ranking: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("degree", "betweenness", "eigenvector", "combined", "ranking")}


@dataclass(frozen=True)
class ControlMatrix:
    b_phys: np.ndarray
    actuated: list[int]

    @property
    def k(self) -> int:
        return len(self.actuated)

    @property
    def n(self) -> int:
        return self.b_phys.shape[0]

    @classmethod
    def from_nodes(cls, n: int, nodes: Sequence[int]) -> "ControlMatrix":
        nodes = sorted(int(i) for i in nodes)
        if len(set(nodes)) != len(nodes) or any(i < 0 or i >= n for i in nodes):
            raise DataError(f"actuated nodes {nodes} invalid for n={n}")
        b = np.zeros((n, n))
        b[nodes, nodes] = 1.0
        return cls(b, nodes)

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "actuated": self.actuated, "b_phys": self.b_phys.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "ControlMatrix":
        return cls.from_nodes(int(payload["n"]), payload["actuated"])


def weighted_betweenness(adjacency: np.ndarray) -> np.ndarray:
    """Unnormalized betweenness with edge length 1/weight, each unordered pair counted once."""
    n = adjacency.shape[0]
    g = nx.Graph()
    g.add_nodes_from(range(n))
    rows, cols = np.nonzero(np.triu(adjacency, k=1))
    for i, j in zip(rows, cols):
        g.add_edge(int(i), int(j), distance=1.0 / adjacency[i, j])
    scores = nx.betweenness_centrality(g, normalized=False, weight="distance")
    return np.array([scores[i] for i in range(n)])


def eigenvector_centrality(adjacency: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Power iteration on A + I (same eigenvectors, no bipartite oscillation).

    Returns the dominant eigenvector scaled to unit max-norm.
    """
    n = adjacency.shape[0]
    shifted = adjacency + np.eye(n)
    x = np.full(n, 1.0)
    residual = np.inf
    for _ in range(max_iter):
        y = shifted @ x
        y /= np.max(np.abs(y))
        residual = np.max(np.abs(y - x))
        x = y
        if residual < tol:
            return np.abs(x)
    raise NumericError(f"eigenvector power iteration did not converge (residual {residual:.3e})")


def minmax(v: np.ndarray) -> np.ndarray:
    span = v.max() - v.min()
    if span <= 0:
        return np.zeros_like(v, dtype=float)
    return (v - v.min()) / span


def rank_desc(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, lower index first on ties."""
    return np.lexsort((np.arange(scores.size), -scores))


def combine(degree, betweenness, eigenvector, weights: Sequence[float] = (1.0, 1.0, 1.0)) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (3,) or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ConfigError(f"weights must be three nonnegative numbers with positive sum, got {weights}")
    stacked = np.stack([minmax(degree), minmax(betweenness), minmax(eigenvector)])
    return (w @ stacked) / w.sum()


def centralities(graph: BrainGraph, weights: Sequence[float] = (1.0, 1.0, 1.0)) -> CentralityReport:
    if graph.n < 2:
        raise DataError("centralities need at least 2 nodes")
    adj = graph.adjacency
    degree = adj.sum(axis=1)
    betweenness = weighted_betweenness(adj)
    eigen = eigenvector_centrality(adj)
    combined = combine(degree, betweenness, eigen, weights)
    return CentralityReport(degree, betweenness, eigen, combined, rank_desc(combined))


def select_nodes(report: CentralityReport, k: int, weights: Sequence[float] = (1.0, 1.0, 1.0)) -> ControlMatrix:
    n = report.degree.size
    if not 1 <= k <= n:
        raise ConfigError(f"k must lie in [1, {n}], got {k}")
    combined = combine(report.degree, report.betweenness, report.eigenvector, weights)
    chosen = rank_desc(combined)[:k]
    return ControlMatrix.from_nodes(n, chosen)
