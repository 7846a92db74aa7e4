"""Plot-ready data bundles assembled from finished pipeline runs.

A run is identified by its ``summary.json``; sibling artifacts in the same
directory supply the graph, trajectories and controls. The bundle holds plain
series only, so any plotting tool can render it.

Bundle layout (``schema_version`` 1), one entry per run under ``runs``:

- ``adjacency``: ``{"n", "grid"}`` thresholded PLV matrix
- ``edges``: ``[[i, j, weight], ...]`` upper-triangle edge list
- ``trajectories``: per channel, first noise seed, uncontrolled/mpc/mfg series
- ``controls``: ``{"mfg", "mpc"}`` k x steps inputs for the first noise seed
- ``histograms``: shared 100-bin symmetric grid, ``global`` and ``per_channel``
  densities for healthy, uncontrolled, mpc and mfg amplitudes
- ``loss_curves``: value and generator loss per iteration
- ``table``: the summary's comparison table
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .pipeline import SCHEMA_VERSION, histogram_block, read_json, write_json
from .synthgen import load_csv


def _load_run(summary_path: Path) -> dict:
    summary = read_json(summary_path)
    if summary.get("kind") != "pipeline_summary":
        raise DataError(f"{summary_path} is not a pipeline summary")
    if summary.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{summary_path} has schema_version {summary.get('schema_version')}, expected {SCHEMA_VERSION}")
    root = summary_path.parent
    return {
        "summary": summary,
        "graph": read_json(root / "graph.json"),
        "control": read_json(root / "control.json"),
        "mpc": read_json(root / "mpc.json"),
        "healthy_window": summary["config"]["pipeline"]["healthy_window"],
        "root": root,
    }


def _resolve(path) -> Path:
    path = Path(path)
    return path / "summary.json" if path.is_dir() else path


def _healthy(run: dict) -> np.ndarray:
    a, b = run["healthy_window"]
    return load_csv(run["root"] / "signals.csv").data[:, a:b]


def build_bundle(inputs: Sequence) -> dict:
    if not inputs:
        raise ConfigError("report needs at least one run (summary.json or its directory)")
    runs = [_load_run(_resolve(p)) for p in inputs]
    n = runs[0]["summary"]["n_channels"]
    for run in runs[1:]:
        if run["summary"]["n_channels"] != n:
            raise DataError("runs disagree on channel count; cannot share one bundle schema")

    entries = []
    for run in runs:
        adj = np.asarray(run["graph"]["adjacency"], dtype=float)
        rows, cols = np.nonzero(np.triu(adj, 1))
        mfg_runs = run["control"]["runs"]
        mpc_runs = run["mpc"]["runs"]
        unc = np.concatenate([np.asarray(r["reference_physical"]) for r in mfg_runs], axis=1)
        series = {
            "healthy": _healthy(run),
            "uncontrolled": unc,
            "mpc": np.concatenate([np.asarray(r["physical"]) for r in mpc_runs], axis=1),
            "mfg": np.concatenate([np.asarray(r["physical"]) for r in mfg_runs], axis=1),
        }
        first_mfg = mfg_runs[0]
        first_mpc = mpc_runs[0]
        entries.append({
            "source": str(run["root"]),
            "seed": run["summary"]["seed"],
            "adjacency": {"n": int(adj.shape[0]), "grid": adj.tolist()},
            "edges": [[int(i), int(j), float(adj[i, j])] for i, j in zip(rows, cols)],
            "trajectories": [
                {"channel": c,
                 "uncontrolled": first_mfg["reference_physical"][c],
                 "mpc": first_mpc["physical"][c],
                 "mfg": first_mfg["physical"][c]}
                for c in range(n)
            ],
            "controls": {"mfg": first_mfg["controls"], "mpc": first_mpc["controls"]},
            "histograms": histogram_block(series),
            "loss_curves": run["summary"]["loss_curves"],
            "table": run["summary"]["table"],
        })
    return {"kind": "report_bundle", "schema_version": SCHEMA_VERSION, "runs": entries}


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_bundle(bundle: dict, outdir) -> list[Path]:
    """bundle.json plus flat CSV series for the first run."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "bundle.json", bundle)
    written = [out / "bundle.json"]
    for idx, run in enumerate(bundle["runs"]):
        tag = f"run{idx}"
        _write_csv(out / f"{tag}_edges.csv", ["i", "j", "weight"], run["edges"])
        hist = run["histograms"]
        labels = list(hist["global"])
        edges = hist["edges"]
        _write_csv(out / f"{tag}_histogram_global.csv", ["left", "right", *labels],
                   ([edges[b], edges[b + 1], *(hist["global"][k][b] for k in labels)] for b in range(hist["bins"])))
        curves = run["loss_curves"]
        _write_csv(out / f"{tag}_loss_curves.csv", ["iteration", "value_loss", "generator_loss"],
                   ([i, v, g] for i, (v, g) in enumerate(zip(curves["value_loss"], curves["generator_loss"]))))
        written += [out / f"{tag}_edges.csv", out / f"{tag}_histogram_global.csv", out / f"{tag}_loss_curves.csv"]
    return written
