"""INI configuration for the whole pipeline.

Each stage reads its own section; values are Python literals (numbers, tuples,
lists, None, True/False) or bare strings. The [pipeline] seed feeds every
stage seed that its section does not set explicitly.
"""

from __future__ import annotations

import ast
import configparser
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .koopman import ReservoirConfig
from .mfg import MfgConfig
from .mpc import MpcConfig
from .synthgen import OscillatorConfig, check_window

SEED_ENV = "KMFG_SEED"
OUTDIR_ENV = "KMFG_OUTDIR"
SECTIONS = ("pipeline", "synthgen", "connectivity", "graphsel", "koopman", "mfg", "mpc")


def parse_value(text: str):
    raw = text.strip()
    lowered = raw.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_window(text) -> tuple[int, int]:
    """"a:b" or a two-element sequence -> (a, b)."""
    if isinstance(text, str):
        parts = text.split(":")
        if len(parts) != 2:
            raise ConfigError(f"window must look like start:stop, got {text!r}")
        try:
            return int(parts[0]), int(parts[1])
        except ValueError:
            raise ConfigError(f"window bounds must be integers, got {text!r}") from None
    try:
        a, b = text
        return int(a), int(b)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid window {text!r}") from None


@dataclass
class ConnectivityConfig:
    window: tuple[int, int] = (1300, 1500)
    threshold: str = "abs:0.4"
    quadratic_form: bool = False

    def __post_init__(self):
        self.window = parse_window(self.window)


@dataclass
class GraphselConfig:
    k: int = 5
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 3:
            raise ConfigError("graphsel weights need three entries")
        if int(self.k) < 1:
            raise ConfigError("graphsel k must be >= 1")
        self.k = int(self.k)


@dataclass
class RunConfig:
    seed: int = 0
    outdir: str = "kmfg_out"
    # CSV input; synthetic data is generated when empty
    data: Optional[str] = None
    healthy_window: tuple[int, int] = (0, 500)
    control_window: tuple[int, int] = (1300, 1500)
    seeds: int = 10
    # rollout length; defaults to the control window length
    steps: Optional[int] = None

    def __post_init__(self):
        self.healthy_window = parse_window(self.healthy_window)
        self.control_window = parse_window(self.control_window)
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps must be >= 1")

    @property
    def rollout_steps(self) -> int:
        return self.steps if self.steps is not None else self.control_window[1] - self.control_window[0]


# Defaults for the synthetic benchmark where a stage default alone is not enough.
BENCHMARK_OVERRIDES = {
    "koopman": {"ridge": 1.0},
    "mfg": {"sigma": 0.3},
    "mpc": {"sigma": 0.3},
}


@dataclass
class PipelineConfig:
    run: RunConfig = field(default_factory=RunConfig)
    synthgen: OscillatorConfig = field(default_factory=OscillatorConfig)
    connectivity: ConnectivityConfig = field(default_factory=ConnectivityConfig)
    graphsel: GraphselConfig = field(default_factory=GraphselConfig)
    koopman: ReservoirConfig = field(default_factory=lambda: ReservoirConfig(**BENCHMARK_OVERRIDES["koopman"]))
    mfg: MfgConfig = field(default_factory=lambda: MfgConfig(**BENCHMARK_OVERRIDES["mfg"]))
    mpc: MpcConfig = field(default_factory=lambda: MpcConfig(**BENCHMARK_OVERRIDES["mpc"]))

    def validate(self) -> None:
        n = self.synthgen.n_samples
        if self.run.data is None:
            for name, win in (("healthy_window", self.run.healthy_window),
                              ("control_window", self.run.control_window),
                              ("connectivity window", self.connectivity.window)):
                try:
                    check_window(*win, n)
                except Exception as exc:
                    raise ConfigError(f"{name}: {exc}") from None
        if self.graphsel.k > self.synthgen.n_channels and self.run.data is None:
            raise ConfigError(f"graphsel k={self.graphsel.k} exceeds n_channels={self.synthgen.n_channels}")

    def snapshot(self) -> dict:
        return {
            "pipeline": asdict(self.run),
            "synthgen": asdict(self.synthgen),
            "connectivity": asdict(self.connectivity),
            "graphsel": asdict(self.graphsel),
            "koopman": asdict(self.koopman),
            "mfg": asdict(self.mfg),
            "mpc": asdict(self.mpc),
        }


_BUILDERS = {
    "pipeline": RunConfig,
    "synthgen": OscillatorConfig,
    "connectivity": ConnectivityConfig,
    "graphsel": GraphselConfig,
    "koopman": ReservoirConfig,
    "mfg": MfgConfig,
    "mpc": MpcConfig,
}
_SEEDED = ("synthgen", "koopman", "mfg")


def _build(section: str, values: dict):
    cls = _BUILDERS[section]
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def read_sections(path) -> dict[str, dict]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return {s: {k: parse_value(v) for k, v in parser[s].items()} for s in parser.sections()}


def from_sections(sections: dict[str, dict], env: Optional[dict] = None) -> PipelineConfig:
    env = os.environ if env is None else env
    sections = {k: dict(v) for k, v in sections.items()}
    run_values = sections.get("pipeline", {})
    if env.get(SEED_ENV):
        try:
            run_values["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if env.get(OUTDIR_ENV):
        run_values["outdir"] = env[OUTDIR_ENV]
    run = _build("pipeline", run_values)
    built = {"pipeline": run}
    for name in SECTIONS[1:]:
        values = {**BENCHMARK_OVERRIDES.get(name, {}), **sections.get(name, {})}
        if name in _SEEDED:
            values.setdefault("seed", run.seed)
        built[name] = _build(name, values)
    config = PipelineConfig(run, built["synthgen"], built["connectivity"], built["graphsel"],
                            built["koopman"], built["mfg"], built["mpc"])
    config.validate()
    return config


def load(path=None, env: Optional[dict] = None) -> PipelineConfig:
    """Config from an INI file (or pure defaults when ``path`` is None)."""
    sections = read_sections(path) if path is not None else {}
    return from_sections(sections, env)


def section(path, name: str):
    """One stage config from a file that may contain only that section."""
    if name not in SECTIONS:
        raise ConfigError(f"unknown section {name!r}")
    return getattr(load(path), "run" if name == "pipeline" else name)


def dump(config: PipelineConfig) -> str:
    lines = []
    for name, values in config.snapshot().items():
        lines.append(f"[{name}]")
        for key, value in values.items():
            lines.append(f"{key} = {value!r}" if isinstance(value, str) else f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
