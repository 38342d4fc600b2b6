"""Command-line entry point: ``softunlearn <command> [options]``.

Every command writes its payload files plus ``manifest.<command>.json`` into
``--out``. Options may also come from a flat ``key = value`` file given with
``--config``; precedence is built-in default < config file < command line.
"""

from __future__ import annotations

import argparse
import ast
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as data_mod
from .engine import Method, UnlearnConfig, evaluate, prepare_run, run_framework
from .errors import SoftUnlearnError
from .files import read_json, read_table, write_json, write_manifest, write_table
from .metrics import DEFAULT_GAMMA, MetricKind
from .model import ModelParams, TrainConfig, train
from .oracle import (
    BENCH_HEADER,
    LOO_CAP,
    SWEEP_HEADER,
    bench_summary,
    run_benchmark,
    run_correlation_experiment,
)
from .qp import QpInstance, solve_analytic

logger = logging.getLogger("softunlearn")

EXIT_USAGE = 1

_TRAIN_DEFAULTS = TrainConfig()
_UNLEARN_DEFAULTS = UnlearnConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config file ----------------------------------------------------------------------

def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Values are parsed as
    Python literals when possible (numbers, True/False, None), else kept as text."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            try:
                values[key] = ast.literal_eval(value)
            except (ValueError, SyntaxError):
                values[key] = value
    return values


# -- argument groups ------------------------------------------------------------------

def _add_data_args(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--data", required=True, help="input CSV")
    g.add_argument("--label-column", default="label")
    g.add_argument("--sensitive-column", default="sensitive")
    g.add_argument("--split-column", default=None,
                   help="column of train/validation/test tags (default: 'split' if present)")
    g.add_argument("--split-seed", type=int, default=0, help="seed for splitting when no split column")
    g.add_argument("--standardize", action="store_true",
                   help="z-score features with train-split statistics")
    g.add_argument("--sensitive-as-feature", action="store_true",
                   help="include the sensitive attribute among the features")


def _add_train_args(p):
    g = p.add_argument_group("training")
    g.add_argument("--l2-reg", type=float, default=_TRAIN_DEFAULTS.l2_reg)
    g.add_argument("--damping", type=float, default=_TRAIN_DEFAULTS.damping)
    g.add_argument("--grad-tol", type=float, default=_TRAIN_DEFAULTS.grad_tol)
    g.add_argument("--max-iters", type=int, default=_TRAIN_DEFAULTS.max_iters)


def _add_model_arg(p):
    p.add_argument("--model", default=None, help="model.json from 'train' (default: train now)")


def _add_metric_args(p, multiple=False):
    if multiple:
        p.add_argument("--metrics", default="dp,robustness",
                       help="comma-separated metric kinds among dp, eop, robustness")
    else:
        p.add_argument("--metric", default="dp", choices=["dp", "eop", "robustness"])
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA,
                   help="adversarial step multiple (must exceed 1)")


def _add_unlearn_args(p, with_method=True):
    g = p.add_argument_group("unlearning")
    if with_method:
        g.add_argument("--method", default=_UNLEARN_DEFAULTS.method.value,
                       choices=[m.value for m in Method])
    g.add_argument("--epochs", type=int, default=_UNLEARN_DEFAULTS.epochs)
    g.add_argument("--lr-descent", type=float, default=_UNLEARN_DEFAULTS.lr_descent)
    g.add_argument("--lr-ascent", type=float, default=_UNLEARN_DEFAULTS.lr_ascent)
    g.add_argument("--delta-threshold", type=float, default=_UNLEARN_DEFAULTS.delta_threshold,
                   help="correct only while the validation metric exceeds this")
    g.add_argument("--hard-fraction", type=float, default=_UNLEARN_DEFAULTS.hard_removal_fraction)
    _add_qp_args(g)


def _add_qp_args(g):
    g.add_argument("--lambda", dest="qp_lambda", type=float, default=_UNLEARN_DEFAULTS.qp_lambda,
                   help="weight-change penalty")
    g.add_argument("--delta", dest="qp_delta", type=float, default=None,
                   help="metric budget in metric units (default: the current metric)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="softunlearn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None, help="flat key = value options file")
        return p

    p = command("gen-synthetic", "write a synthetic dataset CSV")
    p.add_argument("--kind", default="biased_gauss", choices=list(data_mod.SYNTHETIC_KINDS))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--bias-strength", type=float, default=data_mod.DEFAULT_BIAS)
    p.add_argument("--seed", type=int, default=0)

    p = command("train", "fit the regularized logistic model")
    _add_data_args(p)
    _add_train_args(p)

    p = command("influence", "per-sample utility and metric influence (step 1)")
    _add_data_args(p)
    _add_train_args(p)
    _add_model_arg(p)
    _add_metric_args(p)

    p = command("solve-weights", "optimal soft weights from an influence table (step 2)")
    p.add_argument("--influence", required=True, help="influence.csv written by 'influence'")
    _add_qp_args(p)

    p = command("unlearn", "evaluate, optimize and correct (all three steps)")
    _add_data_args(p)
    _add_train_args(p)
    _add_model_arg(p)
    _add_metric_args(p)
    _add_unlearn_args(p)

    p = command("loo-oracle", "leave-one-out retraining against influence estimates")
    _add_data_args(p)
    _add_train_args(p)
    _add_metric_args(p, multiple=True)
    p.add_argument("--cap", type=int, default=LOO_CAP, help="largest training split without --allow-large")
    p.add_argument("--allow-large", action="store_true")

    p = command("benchmark", "hard versus soft schemes plus a deletion-rate sweep")
    _add_data_args(p)
    _add_train_args(p)
    _add_metric_args(p)
    _add_unlearn_args(p, with_method=False)
    p.add_argument("--algorithms", default="if,ga_ft", help="comma-separated among if, ga_ft")
    return parser


def _peek(argv) -> tuple[str | None, str | None]:
    """The command name and ``--config`` value, found before full parsing so
    config values can satisfy required options."""
    command = next((a for a in argv if not a.startswith("-")), None)
    config = None
    for k, a in enumerate(argv):
        if a == "--config" and k + 1 < len(argv):
            config = argv[k + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    command, config = _peek(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    if config is not None and command in subparsers:
        sub = subparsers[command]
        # keys are option names with dashes as underscores, e.g. lr_descent or lambda
        dest_of = {o.lstrip("-").replace("-", "_"): a.dest
                   for a in sub._actions for o in a.option_strings if o.startswith("--")}
        for name in ("help", "config", "out"):
            dest_of.pop(name, None)
        raw = parse_config_file(config)
        unknown = sorted(set(raw) - set(dest_of))
        if unknown:
            raise UsageError(f"{config}: unknown option(s) for {command}: {unknown}")
        values = {dest_of[k]: v for k, v in raw.items()}
        for action in sub._actions:
            if action.dest in values:
                action.required = False
        sub.set_defaults(**values)
    return parser.parse_args(argv)


# -- helpers --------------------------------------------------------------------------

def _train_cfg(args) -> TrainConfig:
    return TrainConfig(l2_reg=args.l2_reg, damping=args.damping, grad_tol=args.grad_tol,
                       max_iters=args.max_iters)


def _unlearn_cfg(args, method=None) -> UnlearnConfig:
    return UnlearnConfig(method=method or args.method, epochs=args.epochs, lr_descent=args.lr_descent,
                         lr_ascent=args.lr_ascent, delta_threshold=args.delta_threshold,
                         hard_removal_fraction=args.hard_fraction, qp_lambda=args.qp_lambda,
                         qp_delta=args.qp_delta, gamma=args.gamma)


def _dataset(args) -> data_mod.Dataset:
    return data_mod.load_csv(args.data, label_column=args.label_column,
                             sensitive_column=args.sensitive_column, split_column=args.split_column,
                             sensitive_as_feature=args.sensitive_as_feature, seed=args.split_seed,
                             do_standardize=args.standardize)


def _model(args, dataset, cfg: TrainConfig) -> ModelParams:
    if args.model:
        m = ModelParams.from_dict(read_json(args.model)["params"])
        if m.dim != dataset.dim:
            raise data_mod.DataError(f"model has {m.dim} features but the dataset has {dataset.dim}")
        return m
    return train(*dataset.train_arrays(), cfg)


def _config_dict(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "verbose"}


# -- commands -------------------------------------------------------------------------

def cmd_gen_synthetic(args, out: Path) -> list[str]:
    ds = data_mod.gen_synthetic(args.kind, args.n, args.d, args.bias_strength, args.seed)
    data_mod.save_csv(ds, out / "dataset.csv")
    return ["dataset.csv"]


def cmd_train(args, out: Path) -> list[str]:
    ds = _dataset(args)
    cfg = _train_cfg(args)
    m = train(*ds.train_arrays(), cfg)
    snap = {role: evaluate(ds.evalset(role), None, m) for role in ("validation", "test")}
    payload = {
        "schema": "softunlearn.model/1",
        "params": m.to_dict(),
        "train_config": asdict(cfg),
        "feature_names": list(ds.feature_names),
        "split_sizes": ds.sizes(),
        "metrics": {role: {k: v for k, v in asdict(s).items() if k != "robustness_loss"}
                    for role, s in snap.items()},
    }
    write_json(out / "model.json", payload)
    return ["model.json"]


def cmd_influence(args, out: Path) -> list[str]:
    ds = _dataset(args)
    cfg = _train_cfg(args)
    kind = MetricKind.parse(args.metric)
    prep = prepare_run(ds, cfg, kind, args.gamma, model=_model(args, ds, cfg))
    t = prep.table
    rows = ((i, u, a, kind.value) for i, (u, a) in enumerate(zip(t.i_util, t.i_metric)))
    write_table(out / "influence.csv", "influence", ["index", "i_util", "i_metric", "metric_kind"], rows)
    scale = 1.0 / len(prep.adv_val) if kind is MetricKind.ROBUSTNESS else 1.0
    write_json(out / "influence.json", {
        "schema": "softunlearn.influence_meta/1",
        "metric_kind": kind.value,
        "gate_metric": prep.gate_metric,
        "metric_scale": scale,
        "n_train": len(t),
        "params": prep.model.to_dict(),
    })
    return ["influence.csv", "influence.json"]


def _write_weights(path: Path, eps, case_id: int) -> None:
    write_table(path, "weights", ["index", "eps", "case_id"],
                ((i, e, case_id) for i, e in enumerate(eps)))


def cmd_solve_weights(args, out: Path) -> list[str]:
    src = Path(args.influence)
    rows = read_table(src, "influence")
    if not rows:
        raise data_mod.DataError(f"{src}: influence table is empty")
    i_util = np.array([float(r["i_util"]) for r in rows])
    i_metric = np.array([float(r["i_metric"]) for r in rows])
    meta_path = src.with_suffix(".json")
    meta = read_json(meta_path) if meta_path.exists() else {}
    if args.qp_delta is None and "gate_metric" not in meta:
        raise UsageError(f"--delta is required when {meta_path} is absent")
    budget = meta["gate_metric"] if args.qp_delta is None else args.qp_delta
    scale = meta.get("metric_scale", 1.0)
    n = len(rows)
    q = QpInstance(i_metric * scale, i_util, args.qp_lambda, n * budget * scale)
    w = solve_analytic(q)
    _write_weights(out / "weights.csv", w.eps, w.case_id)
    write_json(out / "weights.json", {
        "schema": "softunlearn.weights_meta/1",
        "case_histogram": {str(w.case_id): 1},
        "case_id": w.case_id,
        "dual_beta1": w.dual_beta1,
        "dual_beta2": w.dual_beta2,
        "solver": w.solver,
        "diagnostic": w.diagnostic,
        "qp_lambda": q.lam,
        "qp_delta": q.delta,
        "linearized_util_change": float(-np.dot(w.eps, i_util) / n),
        "linearized_metric_change": float(-np.dot(w.eps, i_metric) / n),
    })
    return ["weights.csv", "weights.json"]


def _metric_rows(report):
    fields = ("utility_loss", "mean_loss", "test_accuracy", "dp", "eop", "robustness_loss")
    for phase, snap in (("before", report.before), ("after", report.after)):
        yield [phase] + [getattr(snap, f) for f in fields]


def cmd_unlearn(args, out: Path, timings: dict) -> list[str]:
    ds = _dataset(args)
    cfg = _train_cfg(args)
    ucfg = _unlearn_cfg(args)
    report = run_framework(ds, ucfg, cfg, args.metric, model=_model(args, ds, cfg))
    payload = report.to_dict()
    timings.update(payload.pop("step_runtimes"))
    write_json(out / "report.json", payload)
    write_table(out / "metrics.csv", "metrics",
                ["phase", "utility_loss", "mean_loss", "test_accuracy", "dp", "eop", "robustness_loss"],
                _metric_rows(report))
    outputs = ["report.json", "metrics.csv"]
    if report.weights is not None:
        _write_weights(out / "weights.csv", report.weights.eps, report.weights.case_id)
        outputs.append("weights.csv")
    return outputs


def cmd_loo_oracle(args, out: Path) -> list[str]:
    ds = _dataset(args)
    kinds = [k.strip() for k in args.metrics.split(",") if k.strip()]
    res = run_correlation_experiment(ds, _train_cfg(args), kinds, args.gamma, args.cap, args.allow_large)
    outputs = []
    header = ["index", "actual_delta_util", "actual_delta_metric", "est_util", "est_metric",
              "test_delta_util", "test_delta_metric"]
    for kind, records in res.records.items():
        name = f"loo_{kind}.csv"
        write_table(out / name, "loo", header,
                    ([r.index, r.actual_delta_util, r.actual_delta_metric, r.est_util, r.est_metric,
                      r.test_delta_util, r.test_delta_metric] for r in records))
        outputs.append(name)
    write_json(out / "loo_summary.json", res.summary)
    return outputs + ["loo_summary.json"]


def cmd_benchmark(args, out: Path) -> list[str]:
    ds = _dataset(args)
    algorithms = tuple(a.strip() for a in args.algorithms.split(",") if a.strip())
    res = run_benchmark(ds, _train_cfg(args), _unlearn_cfg(args, method="soft_if"), args.metric,
                        algorithms)
    write_table(out / "benchmark.csv", "benchmark", BENCH_HEADER, (r.to_row() for r in res.results))
    write_table(out / "sweep.csv", "sweep", SWEEP_HEADER, res.sweep)
    write_json(out / "benchmark.json", bench_summary(res))
    return ["benchmark.csv", "sweep.csv", "benchmark.json"]


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "influence": cmd_influence,
    "solve-weights": cmd_solve_weights,
    "unlearn": cmd_unlearn,
    "loo-oracle": cmd_loo_oracle,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"softunlearn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse: --help or usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    timings = {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        fn = COMMANDS[args.command]
        outputs = fn(args, out, timings) if fn is cmd_unlearn else fn(args, out)
        timings["total"] = time.perf_counter() - t0
        write_manifest(out, args.command, argv, _config_dict(args), outputs, timings)
    except SoftUnlearnError as exc:
        print(f"softunlearn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except UsageError as exc:
        print(f"softunlearn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"softunlearn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
