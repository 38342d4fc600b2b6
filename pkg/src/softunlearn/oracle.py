"""Ground truth by retraining, correlation statistics, and the hard-vs-soft benchmark."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .data import Dataset
from .engine import (
    Method,
    MetricSnapshot,
    PartialRunError,
    UnlearnConfig,
    prepare_run,
    run_framework,
)
from .errors import DataError
from .metrics import DEFAULT_GAMMA, MetricKind, craft_adversarial, metric_value
from .model import ModelParams, TrainConfig, train

logger = logging.getLogger(__name__)

LOO_CAP = 2000
SWEEP_FRACTIONS = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30)


def _oracle_tol(cfg: TrainConfig) -> float:
    return cfg.grad_tol / 10


def loo_retrain(X, y, j: int, cfg: TrainConfig, warm_start: ModelParams | None = None) -> ModelParams:
    """Minimizer of the training objective with row ``j`` left out."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise DataError("leave-one-out needs at least two training samples")
    if not 0 <= j < n:
        raise IndexError(f"sample index {j} out of range for n={n}")
    keep = np.arange(n) != j
    return train(X[keep], np.asarray(y)[keep], cfg, init=warm_start, grad_tol=_oracle_tol(cfg))


def weighted_retrain(X, y, eps, cfg: TrainConfig, warm_start: ModelParams | None = None) -> ModelParams:
    """Exact minimizer of ``(1/n) sum_i (1 + eps_i) (loss_i + ridge)``."""
    e = np.asarray(getattr(eps, "eps", eps), dtype=np.float64)
    if e.shape != (np.asarray(X).shape[0],):
        raise ValueError("one weight per training row is required")
    w = 1.0 + e
    if np.any(w < 0):
        warnings.warn(f"{int(np.sum(w < 0))} samples have negative total weight; "
                      "the reweighted problem may be nonconvex", RuntimeWarning, stacklevel=2)
    return train(X, y, cfg, init=warm_start, weights=w, grad_tol=_oracle_tol(cfg))


# -- statistics ---------------------------------------------------------------------

def _pair(xs, ys) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length sequences of at least two values")
    return x, y


def pearson(xs, ys) -> float:
    x, y = _pair(xs, ys)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("correlation is undefined for a constant input")
    return float(stats.pearsonr(x, y)[0])


def spearman(xs, ys) -> float:
    """Rank correlation with average ranks for ties."""
    x, y = _pair(xs, ys)
    return pearson(stats.rankdata(x), stats.rankdata(y))


# -- correlation experiment ---------------------------------------------------------

@dataclass(frozen=True)
class LooRecord:
    index: int
    actual_delta_util: float
    actual_delta_metric: float
    est_util: float
    est_metric: float
    test_delta_util: float = float("nan")
    test_delta_metric: float = float("nan")


@dataclass
class CorrelationResult:
    records: dict  # metric kind -> list[LooRecord]
    summary: dict


def _functional_values(kind: MetricKind, m, valset, adv_val, testset, adv_test):
    if kind is MetricKind.ROBUSTNESS:
        return metric_value(kind, adv_val, m), metric_value(kind, adv_test, m)
    return metric_value(kind, valset, m), metric_value(kind, testset, m)


def run_correlation_experiment(dataset: Dataset, train_cfg: TrainConfig, metric_kinds=("dp",),
                               gamma: float = DEFAULT_GAMMA, cap: int = LOO_CAP,
                               allow_large: bool = False) -> CorrelationResult:
    """Full leave-one-out against influence estimates.

    Every training row is removed once; utility and each metric are re-evaluated
    on validation (fidelity) and test (reporting). Estimates are removal
    influences ``score / n``, so they are in the same units as the actual deltas.
    """
    kinds = [MetricKind.parse(k) for k in metric_kinds]
    if any(k is MetricKind.UTILITY for k in kinds):
        raise ValueError("utility is always included; list only dp, eop or robustness")
    if not kinds:
        raise ValueError("at least one metric kind is required")
    X, y = dataset.train_arrays()
    n = X.shape[0]
    if n > cap and not allow_large:
        raise DataError(f"full leave-one-out on n={n} exceeds the cap of {cap}; pass allow_large to override")
    base = train(X, y, train_cfg, grad_tol=_oracle_tol(train_cfg))
    valset, testset = dataset.evalset("validation"), dataset.evalset("test")
    adv_val = craft_adversarial(valset, base, gamma)
    adv_test = craft_adversarial(testset, base, gamma)

    tables = {k: prepare_run(dataset, train_cfg, k, gamma, model=base).table for k in kinds}
    est_util = tables[kinds[0]].i_util / n
    all_kinds = [MetricKind.UTILITY] + kinds
    before = {k: _functional_values(k, base, valset, adv_val, testset, adv_test) for k in all_kinds}

    deltas = {k: np.empty((n, 2)) for k in all_kinds}
    for j in range(n):
        m = loo_retrain(X, y, j, train_cfg, warm_start=base)
        for k in all_kinds:
            v, t = _functional_values(k, m, valset, adv_val, testset, adv_test)
            deltas[k][j] = (v - before[k][0], t - before[k][1])

    records = {}
    summary = {"n_train": n, "metrics": {}, "cross": {}}
    summary["metrics"]["utility"] = _fidelity(deltas[MetricKind.UTILITY][:, 0], est_util)
    for k in kinds:
        est_metric = tables[k].i_metric / n
        records[k.value] = [
            LooRecord(j, float(deltas[MetricKind.UTILITY][j, 0]), float(deltas[k][j, 0]),
                      float(est_util[j]), float(est_metric[j]),
                      float(deltas[MetricKind.UTILITY][j, 1]), float(deltas[k][j, 1]))
            for j in range(n)
        ]
        summary["metrics"][k.value] = _fidelity(deltas[k][:, 0], est_metric)
        summary["cross"][k.value] = {
            "spearman_validation": _safe_stat(spearman, deltas[MetricKind.UTILITY][:, 0], deltas[k][:, 0]),
            "spearman_test": _safe_stat(spearman, deltas[MetricKind.UTILITY][:, 1], deltas[k][:, 1]),
        }
    return CorrelationResult(records, summary)


def _safe_stat(fn, x, y) -> float:
    try:
        return fn(x, y)
    except ValueError:
        return float("nan")


def _fidelity(actual, estimated) -> dict:
    return {"pearson": _safe_stat(pearson, estimated, actual),
            "spearman": _safe_stat(spearman, estimated, actual)}


# -- benchmark ----------------------------------------------------------------------

@dataclass(frozen=True)
class BenchResult:
    scheme: str
    algorithm: str
    metric_kind: str
    before: MetricSnapshot
    after: MetricSnapshot
    free_lunch: bool
    corrected: bool = True
    error: str | None = None

    def to_row(self) -> list:
        k = self.metric_kind
        return [self.scheme, self.algorithm, self.before.get(k), self.after.get(k),
                self.before.mean_loss, self.after.mean_loss, self.free_lunch, k,
                self.before.test_accuracy, self.after.test_accuracy, self.corrected]


BENCH_HEADER = ["scheme", "algorithm", "before_metric", "after_metric", "before_util", "after_util",
                "free_lunch", "metric_kind", "before_accuracy", "after_accuracy", "corrected"]
SWEEP_HEADER = ["algorithm", "fraction", "metric_after", "test_loss_after", "metric_gain"]


def is_free_lunch(kind, before: MetricSnapshot, after: MetricSnapshot) -> bool:
    return bool(after.get(kind) < before.get(kind) and after.mean_loss < before.mean_loss)


@dataclass
class BenchmarkResult:
    results: list = field(default_factory=list)
    sweep: list = field(default_factory=list)  # rows matching SWEEP_HEADER
    errors: list = field(default_factory=list)


_PAIRS = {"if": (Method.HARD_IF, Method.SOFT_IF), "ga_ft": (Method.HARD_GA_FT, Method.SOFT_GD)}


def run_benchmark(dataset: Dataset, train_cfg: TrainConfig, ucfg: UnlearnConfig, metric_kind,
                  algorithms=("if", "ga_ft"), sweep_fractions=SWEEP_FRACTIONS) -> BenchmarkResult:
    """Hard and soft variants of each algorithm from one trained model.

    Both variants share every budget field of ``ucfg`` (epochs, learning
    rates); only the method differs. Failures are recorded and the remaining
    runs continue.
    """
    kind = MetricKind.parse(metric_kind)
    prepared = prepare_run(dataset, train_cfg, kind, ucfg.gamma)
    out = BenchmarkResult()
    for alg in algorithms:
        if alg not in _PAIRS:
            raise ValueError(f"unknown algorithm {alg!r}; expected one of {sorted(_PAIRS)}")
        hard_cfg, soft_cfg = (replace(ucfg, method=meth) for meth in _PAIRS[alg])
        budget = ("epochs", "lr_descent", "lr_ascent")
        assert all(getattr(hard_cfg, f) == getattr(soft_cfg, f) for f in budget)
        for scheme, cfg in (("hard", hard_cfg), ("soft", soft_cfg)):
            out.results.append(_bench_one(dataset, cfg, train_cfg, kind, prepared, scheme, alg, out))
        for frac in sweep_fractions:
            r = _bench_one(dataset, replace(hard_cfg, hard_removal_fraction=frac), train_cfg,
                           kind, prepared, "hard", alg, out)
            out.sweep.append([alg, frac, r.after.get(kind), r.after.mean_loss,
                              r.before.get(kind) - r.after.get(kind)])
    return out


def _bench_one(dataset, cfg, train_cfg, kind, prepared, scheme, alg, out) -> BenchResult:
    try:
        rep = run_framework(dataset, cfg, train_cfg, kind, prepared=prepared)
    except PartialRunError as exc:
        logger.warning("%s/%s failed: %s", alg, scheme, exc)
        out.errors.append({"algorithm": alg, "scheme": scheme, "error": str(exc)})
        rep = exc.report
        return BenchResult(scheme, alg, kind.value, rep.before, rep.before, False, False, rep.error)
    return BenchResult(scheme, alg, kind.value, rep.before, rep.after,
                       is_free_lunch(kind, rep.before, rep.after), rep.corrected)


def bench_summary(res: BenchmarkResult) -> dict:
    return {
        "results": [dict(asdict(r), before=asdict(r.before), after=asdict(r.after)) for r in res.results],
        "sweep": [dict(zip(SWEEP_HEADER, row)) for row in res.sweep],
        "errors": list(res.errors),
    }
