"""Command-line entry point: one subcommand per stage plus the full run and report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as cfgmod
from . import koopman, mfg, mpc, pipeline, report
from .connectivity import BrainGraph
from .errors import ConfigError, DataError, PipelineError
from .graphsel import ControlMatrix
from .synthgen import generate, load_csv, save_csv

log = logging.getLogger("koopman_mfg")


def _seeds(args, base: int) -> list[int]:
    return list(range(base, base + args.seeds))


def _load_config(path):
    return cfgmod.load(path)


def _graph(path) -> BrainGraph:
    return BrainGraph.from_dict(pipeline.read_json(path))


def _bmatrix(path) -> ControlMatrix:
    return ControlMatrix.from_dict(pipeline.read_json(path))


def _model(path) -> koopman.KoopmanModel:
    return koopman.KoopmanModel.from_dict(pipeline.read_json(path))


def _check_actuation(model: koopman.KoopmanModel, control: ControlMatrix) -> None:
    if sorted(model.actuated) != sorted(control.actuated):
        raise DataError(f"bmatrix actuates {control.actuated} but the model was fitted for {model.actuated}")


def _weights(text: str) -> tuple[float, float, float]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"weights must be comma-separated numbers, got {text!r}") from None
    if len(values) != 3:
        raise ConfigError("weights need exactly three values")
    return values


def cmd_synth(args) -> None:
    config = _load_config(args.config)
    signals = generate(config.synthgen)
    save_csv(signals, args.out)
    log.info("wrote %d x %d signals to %s", signals.n_channels, signals.n_samples, args.out)


def cmd_network(args) -> None:
    signals = load_csv(args.input)
    window = cfgmod.parse_window(args.window)
    plv, graph = pipeline.build_graph(signals, window, args.threshold)
    pipeline.write_json(args.out, pipeline.graph_payload(plv, graph, window, args.threshold))


def cmd_select(args) -> None:
    graph = _graph(args.graph)
    weights = _weights(args.weights)
    rep, control = pipeline.select(graph, args.k, weights)
    pipeline.write_json(args.out, pipeline.bmatrix_payload(rep, control, weights))


def cmd_fit(args) -> None:
    config = _load_config(args.config)
    signals = load_csv(args.input)
    model = koopman.fit_koopman(signals, _graph(args.graph), _bmatrix(args.bmatrix), config.koopman)
    pipeline.write_json(args.out, model.to_dict(matrices_inline=args.inline))


def cmd_predict(args) -> None:
    model = _model(args.model)
    signals = load_csv(args.input)
    pred = pipeline.fidelity(model, signals, cfgmod.parse_window(args.window))
    pipeline.write_json(args.report, {"kind": "prediction_report", **pred})


def cmd_train(args) -> None:
    config = _load_config(args.config)
    model = _model(args.model)
    graph = _graph(args.graph)
    _check_actuation(model, _bmatrix(args.bmatrix))
    pairs = None
    if args.input:
        states = model.encode(load_csv(args.input))
        pairs = (states[:, :-1], states[:, 1:])

    def progress(i, vloss, gloss):
        if i % 500 == 0:
            log.info("iteration %d: value loss %.4g, generator loss %.4g", i, vloss, gloss)

    policy = mfg.train(model, graph, config.mfg, real_pairs=pairs, callback=progress)
    pipeline.write_json(args.out, policy.to_dict())


def _rollout_inputs(args, model):
    signals = load_csv(args.input)
    window = cfgmod.parse_window(args.window)
    healthy = pipeline.healthy_reference(signals, cfgmod.parse_window(args.healthy))
    z0 = pipeline.initial_state(model, model.encode(signals), window[0])
    steps = args.steps or window[1] - window[0]
    return window, healthy, z0, steps


def cmd_control(args) -> None:
    policy = mfg.MfgPolicy.from_dict(pipeline.read_json(args.policy))
    window, healthy, z0, steps = _rollout_inputs(args, policy.model)
    runs = pipeline.control_runs(policy, z0, steps, _seeds(args, args.seed), healthy)
    pipeline.write_json(args.report, pipeline.control_report(runs, healthy, "mfg", policy.history,
                                                             {"window": list(window)}))


def cmd_mpc(args) -> None:
    config = _load_config(args.config)
    model = _model(args.model)
    graph = _graph(args.graph)
    _check_actuation(model, _bmatrix(args.bmatrix))
    window, healthy, z0, steps = _rollout_inputs(args, model)
    runs = pipeline.mpc_runs(model, graph, config.mpc, z0, steps, _seeds(args, args.seed), healthy)
    pipeline.write_json(args.report, pipeline.control_report(runs, healthy, "mpc", None, {"window": list(window)}))


def cmd_run(args) -> None:
    config = _load_config(args.config)

    def progress(name, i, vloss, gloss):
        if i % 500 == 0:
            log.info("%s iteration %d: value loss %.4g, generator loss %.4g", name, i, vloss, gloss)

    summary = pipeline.run_pipeline(config, args.out, progress)
    table = summary["table"]
    for name in ("uncontrolled", "mpc", "mfg"):
        log.info("%-12s W1 to healthy %.4f", name, table[name]["w1_to_healthy"]["mean"])
    log.info("ordering holds in %d/%d seeds", table["ordering"]["count"], table["ordering"]["seeds"])


def cmd_report(args) -> None:
    bundle = report.build_bundle(args.runs)
    for path in report.write_bundle(bundle, args.out):
        log.info("wrote %s", path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kmfg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic oscillator data")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("network", help="PLV graph from a signal window")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--window", required=True)
    p.add_argument("--threshold", default="abs:0.4")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_network)

    p = sub.add_parser("select-nodes", help="rank nodes and build the control matrix")
    p.add_argument("--graph", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--weights", default="1,1,1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("fit-koopman", help="fit the reservoir surrogate")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--bmatrix", required=True)
    p.add_argument("--config")
    p.add_argument("--inline", action="store_true", help="store W_in and W_res in the model file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="one-step and free-run prediction report")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--window", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("train-mfg", help="train value and generator networks")
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--bmatrix", required=True)
    p.add_argument("--config")
    p.add_argument("--in", dest="input", help="signals whose latent transitions anchor the value net")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("control", cmd_control, "closed-loop rollouts of a trained policy"),
                                 ("mpc", cmd_mpc, "receding-horizon baseline rollouts")):
        p = sub.add_parser(name, help=helptext)
        if name == "control":
            p.add_argument("--policy", required=True)
        else:
            p.add_argument("--model", required=True)
            p.add_argument("--graph", required=True)
            p.add_argument("--bmatrix", required=True)
            p.add_argument("--config")
        p.add_argument("--in", dest="input", required=True)
        p.add_argument("--window", required=True)
        p.add_argument("--healthy", default="0:500", help="healthy reference window")
        p.add_argument("--seeds", type=int, default=10)
        p.add_argument("--seed", type=int, default=0, help="first noise seed")
        p.add_argument("--steps", type=int, help="rollout length (default: window length)")
        p.add_argument("--report", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("run-pipeline", help="run every stage end to end")
    p.add_argument("--config")
    p.add_argument("--out", help="output directory (default from config or KMFG_OUTDIR)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="plot-data bundle from finished runs")
    p.add_argument("runs", nargs="*", help="run directories or summary.json files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    logging.getLogger("jax").setLevel(logging.WARNING)
    if getattr(args, "seeds", 1) < 1:
        print("error: --seeds must be >= 1", file=sys.stderr)
        return ConfigError.exit_code
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
