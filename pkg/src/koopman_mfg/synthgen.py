"""Synthetic multichannel recordings from noisy coupled phase oscillators.

A stretch of weak coupling (the healthy regime) is interrupted by a window of
strong coupling with inflated amplitudes (the seizure regime), so every
downstream stage can be exercised without clinical recordings.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import networkx as nx
import numpy as np

from .errors import ConfigError, DataError

TOPOLOGIES = ("ring", "smallworld", "scalefree")


@dataclass
class SignalMatrix:
    """Channels x samples record with optional per-sample regime tags."""

    data: np.ndarray
    channel_names: Optional[list[str]] = None
    sample_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise DataError(f"signal data must be 2-D, got shape {self.data.shape}")
        n, m = self.data.shape
        if n < 2:
            raise DataError(f"need at least 2 channels, got {n}")
        if m < 16:
            raise DataError(f"need at least 16 samples, got {m}")
        if not np.all(np.isfinite(self.data)):
            i, j = np.argwhere(~np.isfinite(self.data))[0]
            raise DataError(f"non-finite value at channel {i}, sample {j}")
        if self.channel_names is None:
            self.channel_names = [f"ch{i}" for i in range(n)]
        elif len(self.channel_names) != n:
            raise DataError("channel_names length does not match channel count")
        if self.sample_labels is not None:
            self.sample_labels = np.asarray(self.sample_labels)
            if self.sample_labels.shape != (m,):
                raise DataError("sample_labels must have one entry per sample")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def window(self, start: int, stop: int) -> "SignalMatrix":
        check_window(start, stop, self.n_samples)
        labels = None if self.sample_labels is None else self.sample_labels[start:stop]
        return SignalMatrix(self.data[:, start:stop], list(self.channel_names), labels)


def check_window(start: int, stop: int, n_samples: int) -> None:
    if not (0 <= start < stop <= n_samples):
        raise DataError(f"window [{start}, {stop}) outside [0, {n_samples})")


@dataclass
class OscillatorConfig:
    n_channels: int = 23
    n_samples: int = 2000
    seed: int = 0
    coupling_healthy: float = 0.1
    coupling_seizure: float = 0.6
    seizure_window: tuple[int, int] = (1300, 1500)
    noise_std: float = 0.05
    # angular frequency per sample; drawn from freq_range when omitted
    base_freqs: Optional[Sequence[float]] = None
    freq_range: tuple[float, float] = (0.06, 0.16)
    amp_seizure_gain: float = 8.0
    amplitude: float = 0.1
    amp_jitter: float = 0.2
    topology: str = "scalefree"

    def __post_init__(self):
        self.seizure_window = tuple(int(v) for v in self.seizure_window)
        self.freq_range = tuple(float(v) for v in self.freq_range)
        self.validate()

    def validate(self) -> None:
        if self.n_channels < 2:
            raise ConfigError("n_channels must be >= 2")
        if self.n_samples < 16:
            raise ConfigError("n_samples must be >= 16")
        start, stop = self.seizure_window
        if not (0 <= start < stop <= self.n_samples):
            raise ConfigError(
                f"seizure_window {self.seizure_window} must satisfy "
                f"0 <= start < end <= n_samples={self.n_samples}"
            )
        scalars = {
            "coupling_healthy": self.coupling_healthy,
            "coupling_seizure": self.coupling_seizure,
            "noise_std": self.noise_std,
            "amp_seizure_gain": self.amp_seizure_gain,
            "amplitude": self.amplitude,
            "amp_jitter": self.amp_jitter,
        }
        for name, value in scalars.items():
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite")
            if value < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.coupling_seizure < self.coupling_healthy:
            raise ConfigError("coupling_seizure must be >= coupling_healthy")
        if self.amp_seizure_gain < 1:
            raise ConfigError("amp_seizure_gain must be >= 1")
        if self.amp_jitter >= 1:
            raise ConfigError("amp_jitter must be < 1")
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"topology must be one of {TOPOLOGIES}")
        if self.base_freqs is not None:
            freqs = np.asarray(self.base_freqs, dtype=float)
            if freqs.shape != (self.n_channels,) or not np.all(np.isfinite(freqs)):
                raise ConfigError("base_freqs needs one finite value per channel")

    @classmethod
    def from_dict(cls, values: dict) -> "OscillatorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown synthgen keys: {sorted(unknown)}")
        return cls(**values)


def coupling_topology(n: int, topology: str, rng: np.random.Generator) -> np.ndarray:
    """Binary symmetric adjacency used by the oscillator coupling term."""
    graph_seed = int(rng.integers(2**31 - 1))
    k = 4 if n > 4 else 2
    if topology == "ring":
        graph = nx.watts_strogatz_graph(n, k, 0.0, seed=graph_seed)
    elif topology == "smallworld":
        graph = nx.connected_watts_strogatz_graph(n, k, 0.2, seed=graph_seed)
    else:
        graph = nx.barabasi_albert_graph(n, min(2, n - 1), seed=graph_seed)
    adj = nx.to_numpy_array(graph, nodelist=range(n))
    np.fill_diagonal(adj, 0.0)
    return adj


def generate(config: OscillatorConfig) -> SignalMatrix:
    """Simulate the Kuramoto network and return amplitude-modulated sines."""
    config.validate()
    n, m = config.n_channels, config.n_samples
    rng = np.random.default_rng(config.seed)
    adj = coupling_topology(n, config.topology, rng)
    if config.base_freqs is None:
        omega = rng.uniform(*config.freq_range, size=n)
    else:
        omega = np.asarray(config.base_freqs, dtype=float)
    amp = config.amplitude + config.amplitude * config.amp_jitter * rng.uniform(-1.0, 1.0, size=n)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    increments = config.noise_std * rng.standard_normal((m, n))

    start, stop = config.seizure_window
    phases = np.empty((n, m))
    for s in range(m):
        phases[:, s] = theta
        c = config.coupling_seizure if start <= s < stop else config.coupling_healthy
        diff = theta[None, :] - theta[:, None]
        coupling = (c / n) * np.sum(adj * np.sin(diff), axis=1)
        theta = theta + omega + coupling + increments[s]

    gain = np.ones(m)
    gain[start:stop] = config.amp_seizure_gain
    data = amp[:, None] * gain[None, :] * np.sin(phases)
    labels = np.full(m, "healthy", dtype="<U7")
    labels[start:stop] = "seizure"
    return SignalMatrix(data, sample_labels=labels)


def save_csv(signals: SignalMatrix, path) -> None:
    """One header row of channel names, then one row per sample."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(signals.channel_names)
        for row in signals.data.T:
            writer.writerow([repr(float(v)) for v in row])


def load_csv(path) -> SignalMatrix:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [name.strip() for name in rows[0]]
    if len(header) < 2:
        raise DataError(f"{path}: need at least 2 channels, header has {len(header)}")
    values = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell at row {r}, column {c + 1} ({header[c]!r}): {cell!r}"
                ) from None
            if not math.isfinite(value):
                raise DataError(
                    f"{path}: non-finite cell at row {r}, column {c + 1} ({header[c]!r}): {cell!r}"
                )
            values[r - 2, c] = value
    return SignalMatrix(values.T.copy(), channel_names=header)
