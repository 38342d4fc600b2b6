"""Model correction from sample weights and the evaluate/optimize/correct loop.

Sign convention for weights: ``eps_i = -1`` removes sample ``i``, ``eps_i = 0``
leaves it alone, ``eps_i = +1`` counts it twice. The closed-form correction
shifts parameters by ``-(1/n) H^{-1} sum_i eps_i grad_i``; gradient rounds take
``theta <- theta - lr * (1/n) sum_i eps_i grad_i(theta)``.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .errors import NumericalError, StaleSnapshotError
from .influence import HessianContext, InfluenceTable, influence_scores
from .metrics import (
    DEFAULT_GAMMA,
    AdversarialSet,
    EvalSet,
    MetricKind,
    craft_adversarial,
    demographic_parity,
    equal_opportunity,
    metric_value,
    robustness_loss,
)
from .model import ModelParams, TrainConfig, objective, predict_proba, sample_gradients, train
from .qp import DEFAULT_LAMBDA, QpInstance, WeightVector, solve_analytic

logger = logging.getLogger(__name__)

# the delta-gate compares against delta_threshold with this dead-band
GATE_DEADBAND = 1e-12


class Method(str, enum.Enum):
    SOFT_IF = "soft_if"
    SOFT_GD = "soft_gd"
    HARD_IF = "hard_if"
    HARD_GA_FT = "hard_ga_ft"

    @property
    def is_soft(self) -> bool:
        return self in (Method.SOFT_IF, Method.SOFT_GD)

    @property
    def algorithm(self) -> str:
        return "if" if self in (Method.SOFT_IF, Method.HARD_IF) else "ga_ft"


@dataclass(frozen=True)
class UnlearnConfig:
    method: Method = Method.SOFT_IF
    epochs: int = 30
    lr_descent: float = 0.01
    lr_ascent: float = 0.0005
    delta_threshold: float = 0.0
    hard_removal_fraction: float = 0.2
    qp_lambda: float = DEFAULT_LAMBDA
    qp_delta: float | None = None
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.lr_descent <= 0 or self.lr_ascent <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.hard_removal_fraction <= 1:
            raise ValueError("hard_removal_fraction must lie in [0, 1]")
        if self.qp_lambda <= 0:
            raise ValueError("qp_lambda must be positive")
        if self.qp_delta is not None and self.qp_delta < 0:
            raise ValueError("qp_delta must be nonnegative")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        return d


# -- corrections ------------------------------------------------------------------

def _eps_array(eps) -> np.ndarray:
    return np.ascontiguousarray(eps.eps if isinstance(eps, WeightVector) else eps, dtype=np.float64)


def apply_weighted_newton(m: ModelParams, eps, ctx: HessianContext) -> ModelParams:
    """One closed-form step toward the minimizer of the reweighted risk."""
    if isinstance(eps, WeightVector) and eps.snapshot is not None and not eps.snapshot.same_as(m):
        raise StaleSnapshotError("weights were computed for a different model snapshot")
    ctx.check(m)
    e = _eps_array(eps)
    if e.shape != (ctx.n,):
        raise ValueError(f"expected {ctx.n} weights, got {e.shape}")
    shift = ctx.param_shift(-(ctx.grads.T @ e))
    return ModelParams.from_vector(m.vector + shift)


def apply_weighted_gradient(m: ModelParams, eps, X, y, cfg: TrainConfig, epochs: int,
                            lr: float, divergence_factor: float = 10.0) -> ModelParams:
    """Full-batch weighted gradient rounds; gradients re-evaluated every round."""
    e = _eps_array(eps)
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if e.shape != (n,):
        raise ValueError(f"expected {n} weights, got {e.shape}")
    if epochs < 1:
        raise ValueError("epochs must be positive")
    if not np.any(e):
        return m
    initial = objective(X, y, m, 0.0, want_hessian=False)[0]
    p = m.vector
    for t in range(epochs):
        cur = ModelParams.from_vector(p)
        G = sample_gradients(X, y, cur, cfg.l2_reg)
        p = p - lr * (G.T @ e) / n
        if not np.all(np.isfinite(p)):
            raise NumericalError(f"weighted gradient rounds produced non-finite parameters at round {t}")
        current = objective(X, y, ModelParams.from_vector(p), 0.0, want_hessian=False)[0]
        if current > divergence_factor * initial:
            raise NumericalError(
                f"weighted gradient rounds diverging: training loss {current:.4g} exceeds "
                f"{divergence_factor:g}x its initial value {initial:.4g} at round {t}"
            )
    return ModelParams.from_vector(p)


def hard_weights(table: InfluenceTable, mode: str, fraction: float) -> WeightVector:
    """Forget the ``floor(fraction * n)`` samples with the most negative metric influence.

    ``if_removal`` gives -1 on the forget set and 0 elsewhere; ``ga_ft`` gives
    -1 on the forget set and +1 on the retain set.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    if mode not in ("if_removal", "ga_ft"):
        raise ValueError("mode must be 'if_removal' or 'ga_ft'")
    n = len(table)
    k = int(np.floor(fraction * n + 1e-9))
    order = np.argsort(table.i_metric, kind="stable")
    forget = np.zeros(n, dtype=bool)
    forget[order[:k]] = True
    if mode == "if_removal":
        eps = np.where(forget, -1.0, 0.0)
    else:
        eps = np.where(forget, -1.0, 1.0)
    return WeightVector(eps, 0, solver="hard", snapshot=table.model_snapshot)


def ga_ft_schedule(m: ModelParams, eps, X, y, cfg: TrainConfig, ucfg: UnlearnConfig) -> ModelParams:
    """Ascent on negatively weighted samples for the first half of the epochs,
    then descent on positively weighted samples for the rest."""
    e = _eps_array(eps)
    ga_epochs = ucfg.epochs // 2
    ft_epochs = ucfg.epochs - ga_epochs
    if ga_epochs:
        m = apply_weighted_gradient(m, np.minimum(e, 0.0), X, y, cfg, ga_epochs, ucfg.lr_ascent)
    if ft_epochs:
        m = apply_weighted_gradient(m, np.maximum(e, 0.0), X, y, cfg, ft_epochs, ucfg.lr_descent)
    return m


# -- evaluation -------------------------------------------------------------------

@dataclass(frozen=True)
class MetricSnapshot:
    utility_loss: float
    mean_loss: float
    test_accuracy: float
    dp: float
    eop: float
    robustness_loss: float

    def get(self, kind) -> float:
        kind = MetricKind.parse(kind)
        return {MetricKind.UTILITY: self.mean_loss, MetricKind.DP: self.dp,
                MetricKind.EOP: self.eop, MetricKind.ROBUSTNESS: self.robustness_loss}[kind]


def _safe(fn, *args) -> float:
    try:
        return float(fn(*args))
    except ValueError:
        return float("nan")


def evaluate(t: EvalSet, adv: AdversarialSet | None, m: ModelParams) -> MetricSnapshot:
    from .metrics import utility_loss

    util = utility_loss(t, m)
    acc = float(np.mean((predict_proba(t.X, m) >= 0.5) == (t.y == 1)))
    rob = robustness_loss(adv, m) if adv is not None else float("nan")
    return MetricSnapshot(util, util / len(t), acc, _safe(demographic_parity, t, m),
                          _safe(equal_opportunity, t, m), rob)


@dataclass
class UnlearnReport:
    method: str
    metric_kind: str
    before: MetricSnapshot
    after: MetricSnapshot
    step_runtimes: dict
    corrected: bool
    gate_metric: float
    delta_threshold: float
    case_histogram: dict = field(default_factory=dict)
    qp_delta: float | None = None
    qp_lambda: float | None = None
    linearized_util_change: float | None = None
    linearized_metric_change: float | None = None
    n_train: int = 0
    failed_step: str | None = None
    error: str | None = None
    params_before: ModelParams | None = field(default=None, repr=False)
    params_after: ModelParams | None = field(default=None, repr=False)
    weights: WeightVector | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "schema": "softunlearn.report/1",
            "method": self.method,
            "metric_kind": self.metric_kind,
            "before": asdict(self.before),
            "after": asdict(self.after) if self.after is not None else None,
            "step_runtimes": dict(self.step_runtimes),
            "corrected": self.corrected,
            "gate_metric": self.gate_metric,
            "delta_threshold": self.delta_threshold,
            "case_histogram": {str(k): v for k, v in sorted(self.case_histogram.items())},
            "qp_delta": self.qp_delta,
            "qp_lambda": self.qp_lambda,
            "linearized_util_change": self.linearized_util_change,
            "linearized_metric_change": self.linearized_metric_change,
            "n_train": self.n_train,
            "failed_step": self.failed_step,
            "error": self.error,
            "params_before": self.params_before.to_dict() if self.params_before else None,
            "params_after": self.params_after.to_dict() if self.params_after else None,
        }


# -- orchestration ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Prepared:
    """Everything Step 1 produces, reusable across methods for one model snapshot."""

    model: ModelParams
    valset: EvalSet
    testset: EvalSet
    adv_val: AdversarialSet | None
    adv_test: AdversarialSet | None
    table: InfluenceTable
    before: MetricSnapshot
    gate_metric: float
    seconds: float


def prepare_run(dataset: Dataset, train_cfg: TrainConfig, metric_kind, gamma: float = DEFAULT_GAMMA,
                model: ModelParams | None = None) -> Prepared:
    kind = MetricKind.parse(metric_kind)
    X, y = dataset.train_arrays()
    if model is None:
        model = train(X, y, train_cfg)
    valset, testset = dataset.evalset("validation"), dataset.evalset("test")
    if np.any(model.theta):
        adv_val = craft_adversarial(valset, model, gamma)
        adv_test = craft_adversarial(testset, model, gamma)
    elif kind is MetricKind.ROBUSTNESS:
        raise ValueError("robustness needs a model with nonzero weights")
    else:
        adv_val = adv_test = None
    before = evaluate(testset, adv_test, model)
    t0 = time.perf_counter()
    table = influence_scores(X, y, valset, model, train_cfg, kind, advset=adv_val)
    seconds = time.perf_counter() - t0
    gate = metric_value(kind, adv_val if kind is MetricKind.ROBUSTNESS else valset, model)
    return Prepared(model, valset, testset, adv_val, adv_test, table, before, gate, seconds)


def soft_weights(table: InfluenceTable, gate_metric: float, lam: float = DEFAULT_LAMBDA,
                 delta: float | None = None, metric_scale: float = 1.0) -> tuple[WeightVector, QpInstance]:
    """Solve for soft weights.

    ``delta`` is in metric units (default: the current metric); the QP sees it
    multiplied by n because the scores omit the 1/n factor. ``metric_scale``
    rescales a summed metric to a per-sample mean so that ``lam`` means the same
    thing for every metric kind; the constraint set is unchanged by it.
    """
    n = len(table)
    budget = gate_metric if delta is None else delta
    q = QpInstance(table.i_metric * metric_scale, table.i_util, lam, n * budget * metric_scale)
    return solve_analytic(q).with_snapshot(table.model_snapshot), q


def correct(method: Method, m: ModelParams, weights: WeightVector, ctx: HessianContext,
            X, y, train_cfg: TrainConfig, ucfg: UnlearnConfig) -> ModelParams:
    if method in (Method.SOFT_IF, Method.HARD_IF):
        return apply_weighted_newton(m, weights, ctx)
    return ga_ft_schedule(m, weights, X, y, train_cfg, ucfg)


def run_framework(dataset: Dataset, cfg: UnlearnConfig, train_cfg: TrainConfig, metric_kind,
                  model: ModelParams | None = None, prepared: Prepared | None = None) -> UnlearnReport:
    """Evaluate influence, optimize weights, correct the model; report on the test split.

    Correction only happens while the validation metric exceeds ``delta_threshold``.
    """
    kind = MetricKind.parse(metric_kind)
    X, y = dataset.train_arrays()
    if prepared is None:
        prepared = prepare_run(dataset, train_cfg, kind, cfg.gamma, model)
    m = prepared.model
    runtimes = {"evaluate": prepared.seconds, "optimize": 0.0, "correct": 0.0}
    report = UnlearnReport(cfg.method.value, kind.value, prepared.before, prepared.before,
                           runtimes, False, prepared.gate_metric, cfg.delta_threshold,
                           n_train=X.shape[0], params_before=m, params_after=m)
    if prepared.gate_metric <= cfg.delta_threshold + GATE_DEADBAND:
        logger.info("metric %.3g within threshold %.3g; skipping correction",
                    prepared.gate_metric, cfg.delta_threshold)
        return report

    table = prepared.table
    step = "optimize"
    try:
        t0 = time.perf_counter()
        if cfg.method.is_soft:
            scale = 1.0 / len(prepared.adv_val) if kind is MetricKind.ROBUSTNESS else 1.0
            weights, q = soft_weights(table, prepared.gate_metric, cfg.qp_lambda, cfg.qp_delta, scale)
            report.qp_delta, report.qp_lambda = q.delta, q.lam
            report.case_histogram = {weights.case_id: 1}
        else:
            mode = "if_removal" if cfg.method is Method.HARD_IF else "ga_ft"
            weights = hard_weights(table, mode, cfg.hard_removal_fraction)
        runtimes["optimize"] = time.perf_counter() - t0

        step = "correct"
        t0 = time.perf_counter()
        new_m = correct(cfg.method, m, weights, table.context, X, y, train_cfg, cfg)
        runtimes["correct"] = time.perf_counter() - t0
    except Exception as exc:  # noqa: BLE001
        report.failed_step = step
        report.error = f"{type(exc).__name__}: {exc}"
        raise PartialRunError(report) from exc

    report.weights = weights
    report.linearized_util_change = float(-np.dot(weights.eps, table.i_util) / len(table))
    report.linearized_metric_change = float(-np.dot(weights.eps, table.i_metric) / len(table))
    report.corrected = True
    report.params_after = new_m
    report.after = evaluate(prepared.testset, prepared.adv_test, new_m)
    return report


class PartialRunError(NumericalError):
    """A framework run failed part-way; ``report`` holds what was completed."""

    def __init__(self, report: UnlearnReport):
        self.report = report
        super().__init__(f"framework run failed during {report.failed_step}: {report.error}")
