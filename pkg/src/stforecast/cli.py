"""Command-line front end: simulate, infer, eval-graph, augment, train, forecast, evaluate, table1.

Every command writes its outputs and a ``manifest.json`` (seed, config hash,
package version) into ``--out``. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentError, forward as augment_forward, inverse as augment_inverse
from .em_infer import DegenerateModelError, DivergenceError, EMConfig, GridSearchError, build_stwg, fit as em_fit, \
    grid_search_w
from .events import DataError, NodeSeries, SeriesState, bin_counts, load_events, load_series, save_events, \
    save_series
from .graph import load_graph, save_graph
from .gsrnn import (ForecastData, ForecastRun, GsrnnConfig, GsrnnModel, InputError, JointModel, RangeError,
                    SingleNodeModel, baseline_forecast, fit as nn_fit, fit_single_nodes, forecast, load_model,
                    partition_nodes, save_model)
from .hawkes import HawkesModel, StabilityError, load_model as load_hawkes, save_model as save_hawkes
from .metrics import precision_matrix, rmse, spectrum
from .neural import ConfigError, NumericError, TrainConfig
from .synth import GenerationError, MetricError, Prior, SyntheticSpec, evaluate_recovery, generate, prior_mask, \
    run_table1

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_DATA_ERRORS = (DataError, AugmentError, InputError, RangeError, MetricError, FileNotFoundError,
                json.JSONDecodeError)
_NUMERIC_ERRORS = (ArithmeticError, StabilityError, GenerationError, NumericError, DivergenceError,
                   DegenerateModelError)
_CONFIG_ERRORS = (ConfigError, GridSearchError, ValueError, KeyError, TypeError)


class Run:
    """Output directory, figure switch and the list of files written."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.figures = not args.no_figures
        self.outputs = []

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(str(p.relative_to(self.out)))
        return p

    def figure(self, name: str, fn, *a, **kw) -> None:
        if self.figures:
            fn(*a, path=self.path(name), **kw)

    def manifest(self) -> None:
        settings = {k: v for k, v in sorted(vars(self.args).items())
                    if k not in ("out", "threads", "no_figures", "config", "func")}
        blob = json.dumps(settings, sort_keys=True, default=str)
        doc = {"command": self.args.command, "version": __version__, "seed": self.args.seed,
               "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
               "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
               "settings": json.loads(blob), "outputs": self.outputs}
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=1))


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x) -> str:
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _scan_nodes(path) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        raise DataError(f"{path}: no events; pass --nodes")
    return int(data[:, 1].max()) + 1


def _load_counts(args) -> NodeSeries:
    if args.series:
        series = load_series(args.series, args.period)
        if series.state is not SeriesState.RAW:
            raise DataError(f"{args.series}: expected raw counts, found a {series.state.value} series")
        return series
    if not args.events:
        raise ConfigError("give --series or --events")
    nodes = args.nodes or _scan_nodes(args.events)
    seq = load_events(args.events, nodes, args.horizon, args.bin_width)
    return bin_counts(seq, args.bin_width, args.period)


# commands -------------------------------------------------------------------


def cmd_simulate(args, run: Run) -> None:
    diurnal = (args.diurnal_amplitude, args.period * args.bin_width) if args.diurnal_amplitude > 0 else None
    spec = SyntheticSpec(num_nodes=args.nodes, sparsity=args.sparsity, mu_range=tuple(args.mu_range),
                         a_range=tuple(args.a_range), horizon=args.horizon, w=args.w, seed=args.seed,
                         self_loops=not args.no_self_loops, diurnal=diurnal)
    truth, seq = generate(spec)
    save_events(seq, run.path("events.csv"))
    save_hawkes(truth, run.path("truth.json"))
    counts = bin_counts(seq, args.bin_width, args.period)
    save_series(counts, run.path("counts.csv"))
    if run.figures and counts.length >= 2:
        from .plotting import plot_spectrum
        sp = spectrum(counts.values.sum(axis=0))
        run.figure("spectrum.png", plot_spectrum, sp.frequency, sp.power, period_marks=(args.period,))


def cmd_infer(args, run: Run) -> None:
    nodes = args.nodes or _scan_nodes(args.events)
    seq = load_events(args.events, nodes, args.horizon)
    if args.until is not None:
        seq = seq.restrict(args.until)
    trunc = None if args.truncation is None else float(args.truncation)
    cfg = EMConfig(l1_lambda=args.l1_lambda, max_iters=args.max_iters, tol=args.tol,
                   truncation_horizon=trunc, shrink_scale=args.shrink)
    if args.w_grid:
        w, lls, states = grid_search_w(seq, args.w_grid, cfg)
        state = states[[float(g) for g in args.w_grid].index(w)]
        _write_rows(run.path("likelihood_grid.csv"), ["w", "log_likelihood"],
                    [[repr(float(g)), _fmt(ll)] for g, ll in zip(args.w_grid, lls)])
        if run.figures:
            from .plotting import plot_likelihood_grid
            run.figure("likelihood_grid.png", plot_likelihood_grid, args.w_grid, lls, best=w)
    else:
        state = em_fit(seq, args.w, cfg)
    save_hawkes(state.model, run.path("model.json"))
    state.write_log(run.path("em_log.csv"))
    graph = build_stwg(state.model, args.graph_sparsity)
    k = min(args.classes, nodes)
    graph = graph.with_classes(partition_nodes(seq.counts(), k))
    save_graph(graph, run.path("graph.json"))


def cmd_eval_graph(args, run: Run) -> None:
    truth = load_hawkes(args.truth)
    inferred = load_hawkes(args.inferred)
    if truth.num_nodes != inferred.num_nodes:
        raise DataError("truth and inferred models have different node counts")
    edges = truth.A > 0
    prior = Prior.parse(args.prior)
    mask = None if prior.extra is None else prior_mask(edges, prior, np.random.Generator(np.random.Philox(args.seed)))
    res = evaluate_recovery(edges, inferred, mask)
    _write_rows(run.path("roc.csv"), ["threshold", "fpr", "tpr"],
                [[_fmt(t), repr(float(f)), repr(float(p))] for t, (f, p) in zip(res.thresholds, res.roc)])
    _write_rows(run.path("metrics.csv"), ["metric", "value"], [["auc", repr(float(res.auc))]])
    if run.figures:
        from .plotting import plot_roc
        run.figure("roc.png", plot_roc, {f"{prior.label} (AUC {res.auc:.3f})": res.roc})
    print(f"AUC {res.auc:.4f}")


def cmd_augment(args, run: Run) -> None:
    series = load_series(args.series, args.period)
    if args.direction == "forward":
        out = augment_forward(series, args.period, args.partial)
    else:
        out = augment_inverse(series, args.period)
    save_series(out, run.path("series.csv"))


def _gsrnn_graph(args, raw, train_hours):
    k = min(args.classes, raw.shape[0])
    classes = partition_nodes(raw[:, :train_hours], k)
    if args.graph:
        graph = load_graph(args.graph)
        if graph.num_nodes != raw.shape[0]:
            raise DataError(f"graph has {graph.num_nodes} nodes, series has {raw.shape[0]}")
        return graph.with_classes(classes)
    if args.model == "gsrnn":
        raise ConfigError("the gsrnn model needs --graph")
    from .graph import WeightedGraph
    return WeightedGraph(raw.shape[0], [], [], [], classes)


def cmd_train(args, run: Run) -> None:
    counts = _load_counts(args)
    raw = counts.values
    period = counts.period
    days = raw.shape[1] // period
    train_days = args.train_days or days - max(1, days // 5)
    graph = _gsrnn_graph(args, raw, train_days * period)
    augmented = not args.raw
    lags = args.lags or (list(range(2, 10)) if augmented else list(range(1, 9)))
    data = ForecastData(raw, period, train_days, graph, augmented, lags, skip_nearest=augmented,
                        phase_features=not args.no_phase)
    cfg = TrainConfig(learning_rate=args.lr, decay=args.decay, halve_every=args.halve_every, epochs=args.epochs,
                      seed=args.seed, lags=tuple(data.lags), skip_nearest=augmented, batch_size=args.batch_size)
    if args.model == "gsrnn":
        gcfg = GsrnnConfig(tuple(args.input_sizes), tuple(args.edge_sizes), tuple(args.node_sizes), args.dropout,
                           not args.no_intra_class, args.node_rnn, args.residual, data.input_dim)
        model = GsrnnModel(graph, gcfg, seed=args.seed)
        history = nn_fit(model, data, cfg, args.subsample, args.sampling)
    elif args.model == "joint":
        model = JointModel(graph.node_class, args.sizes, args.dropout, args.seed, args.residual, data.input_dim)
        history = nn_fit(model, data, cfg, args.subsample, args.sampling)
    else:
        model = SingleNodeModel(data.num_nodes, args.sizes, args.dropout, args.seed, args.residual, data.input_dim)
        history = fit_single_nodes(model, data, cfg)
    extra = {"period": period, "train_days": train_days, "augmented": augmented, "lags": list(data.lags),
             "phase_features": data.phase_features, "scale": data.scale.tolist(), "graph": graph.to_dict(),
             "train": cfg.to_dict(), "model": args.model}
    save_model(model, run.path("checkpoint.json"), extra)
    _write_rows(run.path("loss.csv"), ["epoch", "loss"], [[e + 1, repr(float(v))] for e, v in enumerate(history)])
    if run.figures:
        from .plotting import plot_loss
        run.figure("loss.png", plot_loss, {args.model: history})


def cmd_forecast(args, run: Run) -> None:
    counts = _load_counts(args)
    raw = counts.values
    if args.baseline:
        period = counts.period
        days = raw.shape[1] // period
        train_days = args.train_days or days - max(1, days // 5)
        data = ForecastData(raw, period, train_days, augmented=False, lags=[1], skip_nearest=False,
                            phase_features=False)
        result = baseline_forecast(data, args.baseline, args.start, args.horizon_hours, args.ha_period,
                                   args.k, args.window)
    else:
        if not args.checkpoint:
            raise ConfigError("give --checkpoint or --baseline")
        model, extra = load_model(args.checkpoint)
        from .graph import WeightedGraph
        graph = WeightedGraph.from_dict(extra["graph"])
        data = ForecastData(raw, extra["period"], extra["train_days"], graph, extra["augmented"], extra["lags"],
                            skip_nearest=extra["augmented"], scale=extra["scale"],
                            phase_features=extra["phase_features"])
        result = forecast(model, data, args.start, args.horizon_hours)
    result.write_csv(run.path("forecast.csv"))
    if run.figures:
        from .plotting import plot_forecast
        busiest = int(np.argmax(result.actual_pdf.sum(axis=1)))
        run.figure("forecast.png", plot_forecast, result.hours, result.actual_pdf[busiest],
                   result.predicted_pdf[busiest], label=f"predicted, node {busiest}")
    print(f"RMSE pdf {result.rmse('pdf'):.4f} cdf {result.rmse('cdf'):.4f}")


def cmd_evaluate(args, run: Run) -> None:
    fr = ForecastRun.read_csv(args.forecast)
    wanted = set(args.metrics)
    unknown = wanted - {"rmse", "precision", "spectrum"}
    if unknown:
        raise ConfigError(f"unknown metrics {sorted(unknown)}")
    if "rmse" in wanted:
        rows = [["all", repr(float(rmse(fr.actual_cdf, fr.predicted_cdf))),
                 repr(float(rmse(fr.actual_pdf, fr.predicted_pdf)))]]
        rows += [[str(i), repr(float(rmse(fr.actual_cdf[i], fr.predicted_cdf[i]))),
                  repr(float(rmse(fr.actual_pdf[i], fr.predicted_pdf[i])))] for i in range(fr.actual_pdf.shape[0])]
        _write_rows(run.path("rmse.csv"), ["node", "rmse_cdf", "rmse_pdf"], rows)
    if "precision" in wanted:
        mats = [precision_matrix(fr.actual_pdf[i], fr.predicted_pdf[i], args.max_delay, args.max_threshold)
                for i in range(fr.actual_pdf.shape[0])]
        n_events = sum(m.n_events for m in mats)
        n_hits = sum(m.n_hits for m in mats)
        with np.errstate(invalid="ignore", divide="ignore"):
            beta = np.where(n_events[None, :] > 0, n_hits / np.maximum(n_events, 1)[None, :], np.nan)
        from .metrics import PrecisionMatrix
        pooled = PrecisionMatrix(beta, n_events, n_hits)
        pooled.write_csv(run.path("precision.csv"))
        pooled.write_csv(run.path("precision_long.csv"), long=True)
        if run.figures:
            from .plotting import plot_precision_matrix
            run.figure("precision.png", plot_precision_matrix, beta)
    if "spectrum" in wanted:
        rows = []
        for label, series in (("actual", fr.actual_pdf.sum(axis=0)), ("predicted", fr.predicted_pdf.sum(axis=0))):
            sp = spectrum(series)
            rows.append([label, "0.0", repr(float(sp.dc)), "dc"])
            rows += [[label, repr(float(f)), repr(float(p)), ""] for f, p in zip(sp.frequency, sp.power)]
        _write_rows(run.path("spectrum.csv"), ["series", "frequency", "power", "note"], rows)
        if run.figures:
            from .plotting import plot_spectrum
            sp = spectrum(fr.actual_pdf.sum(axis=0))
            run.figure("spectrum.png", plot_spectrum, sp.frequency, sp.power)


def cmd_table1(args, run: Run) -> None:
    base = SyntheticSpec(num_nodes=args.nodes, horizon=args.horizon, w=args.w)
    cfg = EMConfig(l1_lambda=args.l1_lambda, max_iters=args.max_iters, tol=args.tol)
    table = run_table1(args.sparsities, args.priors, args.seeds, base, cfg, args.threads)
    table.write_csv(run.path("table1.csv"))
    roc_dir = run.out / "roc"
    roc_dir.mkdir(exist_ok=True)
    for p in table.write_roc(roc_dir):
        run.outputs.append(str(p.relative_to(run.out)))
    if run.figures:
        from .plotting import plot_roc
        seed = table.seeds[0]
        for s in table.sparsities:
            curves = {f"{p.label} (AUC {table.mean(p, s):.3f})": table.roc[(p.label, s, seed)] for p in table.priors}
            run.figure(f"roc_s{s:g}.png", plot_roc, curves, title=f"sparsity {s:g}, seed {seed}")
    print(open(run.out / "table1.csv").read(), end="")


# parser ---------------------------------------------------------------------


def _floats(text):
    return [float(x) for x in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(x) for x in str(text).replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON file of option values (keys are option names)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes where supported")
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    parser = argparse.ArgumentParser(prog="stforecast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    def series_inputs(p):
        p.add_argument("--series", help="raw counts CSV")
        p.add_argument("--events", help="event CSV (time,node), binned on the fly")
        p.add_argument("--nodes", type=int)
        p.add_argument("--horizon", type=float, help="observation window of the event file")
        p.add_argument("--bin-width", type=float, default=1.0)
        p.add_argument("--period", type=int, default=24, help="slots per day")
        p.add_argument("--train-days", type=int)

    p = add("simulate", cmd_simulate, "simulate a random sparse Hawkes network")
    p.add_argument("--nodes", type=int, default=30)
    p.add_argument("--sparsity", type=float, default=0.2)
    p.add_argument("--horizon", type=float, default=3e4)
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--mu-range", type=float, nargs=2, default=[0.0, 0.1])
    p.add_argument("--a-range", type=float, nargs=2, default=[0.02, 0.1])
    p.add_argument("--no-self-loops", action="store_true")
    p.add_argument("--diurnal-amplitude", type=float, default=0.0)
    p.add_argument("--period", type=int, default=24)
    p.add_argument("--bin-width", type=float, default=1.0)

    p = add("infer", cmd_infer, "fit a sparse Hawkes network by EM and build the graph")
    p.add_argument("--events", required=True)
    p.add_argument("--nodes", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--until", type=float, help="use only events before this time")
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--w-grid", type=_floats, help="comma-separated decay rates; picks the best likelihood")
    p.add_argument("--l1-lambda", type=float, default=0.01)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--truncation", help="E-step window (time units) or 'inf'; default 10/w")
    p.add_argument("--shrink", choices=["kernel_mass", "absolute"], default="kernel_mass")
    p.add_argument("--graph-sparsity", type=float, default=0.1)
    p.add_argument("--classes", type=int, default=3)

    p = add("eval-graph", cmd_eval_graph, "ROC/AUC of an inferred network against the truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--inferred", required=True)
    p.add_argument("--prior", default="null", help="'null' or 'gt+K'")

    p = add("augment", cmd_augment, "diurnal cumulation + super-resolution, or its inverse")
    p.add_argument("--series", required=True)
    p.add_argument("--period", type=int)
    p.add_argument("--direction", choices=["forward", "inverse"], default="forward")
    p.add_argument("--partial", choices=["error", "drop", "pad"], default="drop")

    p = add("train", cmd_train, "train a GSRNN, joint or single-node forecaster")
    series_inputs(p)
    p.add_argument("--graph", help="graph JSON (required for gsrnn)")
    p.add_argument("--model", choices=["gsrnn", "joint", "single"], default="gsrnn")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--raw", action="store_true", help="train on raw counts instead of the augmented series")
    p.add_argument("--no-phase", action="store_true", help="drop the time-of-day input channels")
    p.add_argument("--lags", type=_ints)
    p.add_argument("--sizes", type=_ints, default=[64, 128], help="cascade widths, first to last")
    p.add_argument("--input-sizes", type=_ints, default=[64])
    p.add_argument("--edge-sizes", type=_ints, default=[64])
    p.add_argument("--node-sizes", type=_ints, default=[128])
    p.add_argument("--node-rnn", choices=["class", "node"], default="class")
    p.add_argument("--no-intra-class", action="store_true")
    p.add_argument("--residual", action="store_true")
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--decay", type=float, default=1e-6)
    p.add_argument("--halve-every", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--subsample", type=float)
    p.add_argument("--sampling", choices=["uniform", "error"], default="uniform")

    p = add("forecast", cmd_forecast, "one-step-ahead forecasts over the test days")
    series_inputs(p)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=["ha", "knn"])
    p.add_argument("--start", type=int, help="first forecast hour (default: first test hour)")
    p.add_argument("--horizon-hours", type=int, help="number of hours to forecast")
    p.add_argument("--ha-period", type=int, help="HA period in slots (default one week)")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--window", type=int, default=8)

    p = add("evaluate", cmd_evaluate, "RMSE, precision matrix and spectra of a forecast")
    p.add_argument("--forecast", required=True)
    p.add_argument("--metrics", type=lambda s: [m.strip() for m in s.split(",") if m.strip()],
                   default=["rmse", "precision", "spectrum"])
    p.add_argument("--max-delay", type=int, default=3)
    p.add_argument("--max-threshold", type=int, default=3)

    p = add("table1", cmd_table1, "recovery AUC over sparsities and priors")
    p.add_argument("--sparsities", type=_floats, default=[0.1, 0.2, 0.3, 0.4, 0.5])
    p.add_argument("--priors", type=lambda s: [x.strip() for x in s.split(",")], default=["null", "gt+200", "gt+400"])
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4])
    p.add_argument("--nodes", type=int, default=30)
    p.add_argument("--horizon", type=float, default=3e4)
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--l1-lambda", type=float, default=0.01)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-5)
    return parser


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    if not args.config:
        return args
    with open(args.config) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    values = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(values) - known - {"command"})
    if unknown:
        raise ConfigError(f"unknown option(s) in {args.config}: {unknown}")
    values.pop("command", None)
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        run = Run(args)
        args.func(args, run)
        run.manifest()
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
