"""Per-sample influence of training points on parameters and evaluation functionals.

For a trained model the removal influence of sample ``j`` on a functional with
gradient ``v`` is ``v^T H^{-1} grad_j``; utility and metric scores omit the
``1/n`` factor that the parameter influence keeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, StaleSnapshotError
from .metrics import AdversarialSet, EvalSet, MetricKind, metric_gradient
from .model import HessianFactor, ModelParams, TrainConfig, hessian, objective, sample_gradients


@dataclass(frozen=True, eq=False)
class HessianContext:
    """Factorized damped Hessian and per-sample gradients at one model snapshot."""

    snapshot: ModelParams
    factor: HessianFactor
    grads: np.ndarray
    n: int

    def check(self, m: ModelParams) -> None:
        if not self.snapshot.same_as(m):
            raise StaleSnapshotError("cached Hessian belongs to a different model snapshot")

    def param_shift(self, v) -> np.ndarray:
        """``(1/n) H^{-1} v``."""
        return self.factor.solve(v) / self.n


def prepare(X, y, m: ModelParams, cfg: TrainConfig, check_trained: bool = True) -> HessianContext:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise DataError("training split is empty")
    if check_trained:
        _, g, _ = objective(X, y, m, cfg.l2_reg, want_hessian=False)
        gnorm = float(np.max(np.abs(g)))
        # small slack over grad_tol absorbs backend rounding differences
        if gnorm > 10 * cfg.grad_tol:
            raise ValueError(
                f"model is not a trained minimizer (gradient norm {gnorm:.3e} > {cfg.grad_tol:g}); "
                "influence estimates assume stationarity"
            )
    H = hessian(X, y, m, cfg)
    return HessianContext(m, HessianFactor(H), sample_gradients(X, y, m, cfg.l2_reg), X.shape[0])


def influence_param(j: int, X, y, m: ModelParams, cfg: TrainConfig,
                    ctx: HessianContext | None = None) -> np.ndarray:
    """Predicted parameter change from removing training sample ``j``."""
    ctx = prepare(X, y, m, cfg) if ctx is None else ctx
    ctx.check(m)
    if not 0 <= j < ctx.n:
        raise IndexError(f"sample index {j} out of range for n={ctx.n}")
    return ctx.param_shift(ctx.grads[j])


@dataclass(frozen=True, eq=False)
class InfluenceTable:
    i_util: np.ndarray
    i_metric: np.ndarray
    metric_kind: MetricKind
    context: HessianContext

    @property
    def model_snapshot(self) -> ModelParams:
        return self.context.snapshot

    def __len__(self) -> int:
        return self.i_util.shape[0]

    def check(self, m: ModelParams) -> None:
        self.context.check(m)


def scores_for(v, ctx: HessianContext) -> np.ndarray:
    """``v^T H^{-1} grad_j`` for every training row, via one solve."""
    u = ctx.factor.solve(np.asarray(v, dtype=np.float64))
    return ctx.grads @ u


def influence_scores(X, y, valset: EvalSet, m: ModelParams, cfg: TrainConfig,
                     metric_kind, advset: AdversarialSet | None = None,
                     ctx: HessianContext | None = None) -> InfluenceTable:
    kind = MetricKind.parse(metric_kind)
    if kind is MetricKind.UTILITY:
        raise ValueError("metric_kind must be dp, eop or robustness")
    ctx = prepare(X, y, m, cfg) if ctx is None else ctx
    ctx.check(m)
    v_util = metric_gradient(MetricKind.UTILITY, valset, m)
    if kind is MetricKind.ROBUSTNESS:
        if advset is None:
            raise ValueError("robustness influence needs an adversarial set")
        v_metric = metric_gradient(kind, advset, m)
    else:
        v_metric = metric_gradient(kind, valset, m)
    i_util = scores_for(v_util, ctx)
    i_metric = scores_for(v_metric, ctx)
    if not (np.all(np.isfinite(i_util)) and np.all(np.isfinite(i_metric))):
        raise ArithmeticError("non-finite influence scores")
    i_util.setflags(write=False)
    i_metric.setflags(write=False)
    return InfluenceTable(i_util, i_metric, kind, ctx)


def weighted_influence(eps, i_minus_one):
    """Influence of reweighting by ``eps`` given the removal influence."""
    return -eps * i_minus_one
