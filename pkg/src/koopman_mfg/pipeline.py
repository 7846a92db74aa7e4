"""Stage functions and the end-to-end run that chains them.

Each stage is usable on its own (the CLI subcommands call them directly) and
every artifact is a self-describing JSON document. ``run_pipeline`` writes all
artifacts into one directory plus ``summary.json``; only the ``timings`` block
of the summary depends on wall-clock time.
"""

from __future__ import annotations

import contextlib
import json
import logging
import time
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import connectivity, graphsel, koopman, mfg, mpc
from .config import PipelineConfig
from .errors import ConfigError, DataError, PipelineError
from .metrics import density_histogram, symmetric_edges, wasserstein1
from .synthgen import SignalMatrix, check_window, generate, load_csv, save_csv

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, allow_nan=False) + "\n")


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing input file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None


@contextlib.contextmanager
def stage(name: str, timings: Optional[dict] = None):
    """Prefix failures with the stage name, keeping the error class (and exit code)."""
    start = time.perf_counter()
    try:
        yield
    except PipelineError as exc:
        raise type(exc)(f"stage {name} failed: {exc}") from exc
    finally:
        if timings is not None:
            timings[name] = round(time.perf_counter() - start, 3)


# stages ---------------------------------------------------------------------

def load_signals(config: PipelineConfig) -> SignalMatrix:
    if config.run.data:
        return load_csv(config.run.data)
    return generate(config.synthgen)


def build_graph(signals: SignalMatrix, window: tuple[int, int], threshold: str):
    check_window(*window, signals.n_samples)
    plv = connectivity.plv_matrix(signals, window)
    mode, value = connectivity.parse_threshold(threshold)
    return plv, connectivity.threshold_adjacency(plv, mode, value)


def graph_payload(plv: np.ndarray, graph: connectivity.BrainGraph, window, threshold: str) -> dict:
    return {"kind": "brain_graph", **graph.to_dict(), "plv": plv.tolist(),
            "window": list(window), "threshold": threshold}


def select(graph: connectivity.BrainGraph, k: int, weights) -> tuple[graphsel.CentralityReport, graphsel.ControlMatrix]:
    report = graphsel.centralities(graph, weights)
    return report, graphsel.select_nodes(report, k, weights)


def bmatrix_payload(report: graphsel.CentralityReport, control: graphsel.ControlMatrix, weights) -> dict:
    return {"kind": "control_matrix", **control.to_dict(), "centrality": report.to_dict(), "weights": list(weights)}


def initial_state(model: koopman.KoopmanModel, states: np.ndarray, start: int) -> np.ndarray:
    """Latent state after consuming sample ``start``."""
    col = start - model.tau
    if not 0 <= col < states.shape[1]:
        raise DataError(f"window start {start} is outside the encodable range [{model.tau}, {model.tau + states.shape[1]})")
    return states[:, col]


def fidelity(model: koopman.KoopmanModel, signals: SignalMatrix, window: tuple[int, int]) -> dict:
    """One-step and free-run predictions over ``window`` against the record."""
    start, stop = window
    check_window(start, stop, signals.n_samples)
    if start - 1 < model.tau:
        raise DataError(f"window start must be > tau={model.tau}")
    states = model.encode(signals)
    true = signals.data[:, start:stop]
    one_step = koopman.one_step_predictions(model, states[:, start - 1 - model.tau:stop - 1 - model.tau])
    _, free = koopman.forecast(model, states[:, start - 1 - model.tau], stop - start)
    free = free[:, 1:]
    persistence = signals.data[:, start - 1:stop - 1]
    return {
        "window": [start, stop],
        "one_step": koopman.metrics(true, one_step),
        "free_run": koopman.metrics(true, free),
        "persistence": koopman.metrics(true, persistence),
        "series": {"true": true.tolist(), "one_step": one_step.tolist(), "free_run": free.tolist()},
    }


def healthy_reference(signals: SignalMatrix, window: tuple[int, int]) -> np.ndarray:
    check_window(*window, signals.n_samples)
    return signals.data[:, window[0]:window[1]]


def histogram_block(series: dict[str, np.ndarray], bins: int = 100) -> dict:
    """Global and per-channel densities on one shared symmetric grid."""
    pooled = np.concatenate([np.ravel(v) for v in series.values()])
    edges = symmetric_edges(pooled, bins)
    n = next(iter(series.values())).shape[0]
    return {
        "bins": bins,
        "edges": edges.tolist(),
        "global": {k: density_histogram(v, edges).tolist() for k, v in series.items()},
        "per_channel": [{k: density_histogram(v[i], edges).tolist() for k, v in series.items()} for i in range(n)],
    }


def control_report(runs: list[mfg.ControlRun], healthy: np.ndarray, label: str,
                   loss_curves: Optional[dict] = None, extra: Optional[dict] = None) -> dict:
    """Per-seed trajectories, controls, metrics and histogram series for one controller."""
    metric_keys = list(runs[0].metrics)
    summary = {}
    for key in metric_keys:
        values = [r.metrics[key] for r in runs]
        if all(v is not None for v in values):
            summary[key] = {"mean": float(np.mean(values)), "per_seed": [float(v) for v in values]}
    hist = histogram_block({
        "healthy": healthy,
        "uncontrolled": np.concatenate([r.reference_physical for r in runs], axis=1),
        label: np.concatenate([r.physical for r in runs], axis=1),
    })
    return {
        "kind": "control_report",
        "schema_version": SCHEMA_VERSION,
        "controller": label,
        "n": int(runs[0].physical.shape[0]),
        "steps": int(runs[0].controls.shape[1]),
        "noise_seeds": [r.noise_seed for r in runs],
        "runs": [r.to_dict() for r in runs],
        "metrics": summary,
        "histograms": hist,
        "loss_curves": loss_curves or {},
        **(extra or {}),
    }


def control_runs(policy: mfg.MfgPolicy, z0: np.ndarray, steps: int, seeds: Iterable[int],
                 healthy: np.ndarray) -> list[mfg.ControlRun]:
    return [mfg.rollout(policy, z0, steps, "controlled", s, healthy) for s in seeds]


def mpc_runs(model, graph, config: mpc.MpcConfig, z0, steps: int, seeds: Iterable[int],
             healthy: np.ndarray) -> list[mfg.ControlRun]:
    return [mpc.mpc_rollout(model, graph, config, z0, steps, s, healthy) for s in seeds]


def comparison_table(mfg_runs: list[mfg.ControlRun], mpc_list: list[mfg.ControlRun]) -> dict:
    """W1-to-healthy and RMS amplitude per controller, plus the per-seed ordering check."""
    def block(physicals, healthy_w1):
        rms = [float(np.sqrt(np.mean(p**2))) for p in physicals]
        return {"w1_to_healthy": {"mean": float(np.mean(healthy_w1)), "per_seed": healthy_w1},
                "rms_amplitude": {"mean": float(np.mean(rms)), "per_seed": rms}}

    unc = [r.metrics["w1_vs_healthy_uncontrolled"] for r in mfg_runs]
    w_mfg = [r.metrics["w1_vs_healthy_controlled"] for r in mfg_runs]
    w_mpc = [r.metrics["w1_vs_healthy_controlled"] for r in mpc_list]
    holds = [bool(a <= b <= c) for a, b, c in zip(w_mfg, w_mpc, unc)]
    return {
        "uncontrolled": block([r.reference_physical for r in mfg_runs], unc),
        "mpc": block([r.physical for r in mpc_list], w_mpc),
        "mfg": block([r.physical for r in mfg_runs], w_mfg),
        "ordering": {"rule": "mfg <= mpc <= uncontrolled", "holds": holds, "count": int(sum(holds)),
                     "seeds": len(holds)},
        "mfg_variance_ratio": float(np.mean([r.metrics["amplitude_variance_ratio"] for r in mfg_runs])),
        "mfg_control_smoothness": float(np.mean([r.metrics["control_smoothness"] for r in mfg_runs])),
    }


# end to end -----------------------------------------------------------------

def run_pipeline(config: PipelineConfig, outdir=None, progress=None) -> dict:
    """Run every stage, write artifacts into ``outdir`` and return the summary."""
    out = Path(outdir or config.run.outdir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    run = config.run
    seeds = list(range(run.seed, run.seed + run.seeds))

    with stage("data", timings):
        signals = load_signals(config)
        save_csv(signals, out / "signals.csv")
        healthy = healthy_reference(signals, run.healthy_window)
        check_window(*run.control_window, signals.n_samples)

    with stage("network", timings):
        cc = config.connectivity
        plv, graph = build_graph(signals, cc.window, cc.threshold)
        write_json(out / "graph.json", graph_payload(plv, graph, cc.window, cc.threshold))

    with stage("select-nodes", timings):
        gs = config.graphsel
        if gs.k > graph.n:
            raise ConfigError(f"k={gs.k} exceeds the {graph.n} available nodes")
        report, control = select(graph, gs.k, gs.weights)
        write_json(out / "bmatrix.json", bmatrix_payload(report, control, gs.weights))

    with stage("fit-koopman", timings):
        model = koopman.fit_koopman(signals, graph, control, config.koopman)
        write_json(out / "model.json", model.to_dict())

    with stage("predict", timings):
        pred = fidelity(model, signals, run.control_window)
        write_json(out / "predict.json", {"kind": "prediction_report", **pred})

    mfg_config = config.mfg
    if mfg_config.quadratic_form != config.connectivity.quadratic_form:
        mfg_config = mfg.MfgConfig(**{**mfg_config.__dict__, "quadratic_form": config.connectivity.quadratic_form})

    with stage("train-mfg", timings):
        callback = None if progress is None else (lambda i, a, b: progress("train-mfg", i, a, b))
        policy = mfg.train(model, graph, mfg_config, callback=callback)
        write_json(out / "policy.json", policy.to_dict())

    states = model.encode(signals)
    z0 = initial_state(model, states, run.control_window[0])
    steps = run.rollout_steps

    with stage("control", timings):
        runs_mfg = control_runs(policy, z0, steps, seeds, healthy)
        write_json(out / "control.json", control_report(runs_mfg, healthy, "mfg", policy.history,
                                                        {"window": list(run.control_window)}))

    with stage("mpc", timings):
        mpc_config = config.mpc
        runs_mpc = mpc_runs(model, graph, mpc_config, z0, steps, seeds, healthy)
        write_json(out / "mpc.json", control_report(runs_mpc, healthy, "mpc", None,
                                                    {"window": list(run.control_window)}))

    table = comparison_table(runs_mfg, runs_mpc)
    w1_windows = {
        "seizure_vs_healthy": wasserstein1(signals.data[:, run.control_window[0]:run.control_window[1]], healthy),
    }
    summary = {
        "kind": "pipeline_summary",
        "schema_version": SCHEMA_VERSION,
        "seed": run.seed,
        "noise_seeds": seeds,
        "n_channels": signals.n_channels,
        "n_samples": signals.n_samples,
        "config": config.snapshot(),
        "graph": {"edges": int(np.count_nonzero(np.triu(graph.adjacency, 1))), "threshold_used": graph.threshold_used},
        "selected_nodes": list(control.actuated),
        "spectral_radius_k": model.spectral_radius_k,
        "fidelity": {mode: {k: pred[mode][k] for k in ("rmse_global", "w1_global")}
                     for mode in ("one_step", "free_run", "persistence")},
        "reference": w1_windows,
        "table": table,
        "mfg_trained": policy.trained,
        "loss_curves": policy.history,
        "artifacts": sorted(p.name for p in out.iterdir() if p.name != "summary.json") + ["summary.json"],
        "timings": timings,
    }
    write_json(out / "summary.json", summary)
    return summary
