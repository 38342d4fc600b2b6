"""Evaluation functionals and their parameter gradients.

Utility is the summed validation loss, fairness is demographic parity or
equal opportunity between the two sensitive groups, and robustness is the
summed loss on samples pushed across the linear decision boundary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError
from .model import ModelParams, Sample, sample_gradients, sample_losses

DEFAULT_GAMMA = 1.5


class MetricKind(str, enum.Enum):
    UTILITY = "utility"
    DP = "dp"
    EOP = "eop"
    ROBUSTNESS = "robustness"

    @classmethod
    def parse(cls, value) -> "MetricKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown metric kind {value!r}; expected one of "
                             f"{[k.value for k in cls]}") from None


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EvalSet:
    X: np.ndarray
    y: np.ndarray
    g: np.ndarray
    role: str = "validation"

    def __post_init__(self):
        X = _frozen(self.X)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DataError("evaluation set must be a nonempty 2-D feature matrix")
        y, g = _frozen(self.y), _frozen(self.g)
        if y.shape != (X.shape[0],) or g.shape != (X.shape[0],):
            raise DataError("labels and sensitive attribute must match the row count")
        if self.role not in ("validation", "test"):
            raise ValueError("role must be 'validation' or 'test'")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "g", g)

    @classmethod
    def from_samples(cls, samples: list[Sample], role: str = "validation") -> "EvalSet":
        if not samples:
            raise DataError("evaluation set is empty")
        return cls(np.stack([s.x for s in samples]), [s.y for s in samples],
                   [s.g for s in samples], role)

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True, eq=False)
class AdversarialSet:
    """Perturbed copies of an evaluation set, frozen at crafting time."""

    X: np.ndarray
    y: np.ndarray
    g: np.ndarray
    gamma: float
    source_model: ModelParams
    X_clean: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]


def utility_loss(t: EvalSet | AdversarialSet, m: ModelParams) -> float:
    return float(np.sum(sample_losses(t.X, t.y, m)))


def _group_masks(t, positives_only=False):
    g0 = t.g == 0
    g1 = t.g == 1
    if positives_only:
        g0 &= t.y == 1
        g1 &= t.y == 1
    if not g0.any() or not g1.any():
        what = "positive-label samples in" if positives_only else "samples from"
        raise DataError(f"fairness metric needs {what} both sensitive groups")
    return g0, g1


def demographic_parity(t: EvalSet, m: ModelParams) -> float:
    g0, g1 = _group_masks(t)
    p = expit(t.X @ m.theta + m.intercept)
    return float(abs(p[g0].mean() - p[g1].mean()))


def equal_opportunity(t: EvalSet, m: ModelParams) -> float:
    g0, g1 = _group_masks(t, positives_only=True)
    ell = sample_losses(t.X, t.y, m)
    return float(abs(ell[g1].mean() - ell[g0].mean()))


def craft_adversarial(t: EvalSet, m: ModelParams, gamma: float = DEFAULT_GAMMA,
                      strict: bool = True) -> AdversarialSet:
    """Move each sample along ``theta`` so its margin becomes ``(1-gamma)`` times itself.

    ``strict=False`` admits ``gamma == 1`` (projection onto the hyperplane),
    which is only meaningful as a probe.
    """
    if strict and not gamma > 1:
        raise ValueError("gamma must exceed 1")
    if not strict and not gamma >= 1:
        raise ValueError("gamma must be at least 1")
    tt = float(np.dot(m.theta, m.theta))
    if tt == 0.0:
        raise ValueError("cannot craft adversarial samples for a zero weight vector")
    margin = t.X @ m.theta + m.intercept
    X_adv = t.X - np.outer(gamma * margin / tt, m.theta)
    return AdversarialSet(_frozen(X_adv), t.y, t.g, float(gamma), m, t.X)


def robustness_loss(adv: AdversarialSet, m: ModelParams) -> float:
    if len(adv) == 0:
        raise DataError("adversarial set is empty")
    return utility_loss(adv, m)


def metric_value(kind, t, m: ModelParams) -> float:
    kind = MetricKind.parse(kind)
    if kind is MetricKind.UTILITY:
        return utility_loss(t, m)
    if kind is MetricKind.DP:
        return demographic_parity(t, m)
    if kind is MetricKind.EOP:
        return equal_opportunity(t, m)
    if not isinstance(t, AdversarialSet):
        raise TypeError("robustness is evaluated on an AdversarialSet")
    return robustness_loss(t, m)


def metric_gradient(kind, t, m: ModelParams) -> np.ndarray:
    """Gradient over ``(theta, intercept)``; zero subgradient at an exact group tie."""
    kind = MetricKind.parse(kind)
    if kind is MetricKind.UTILITY or kind is MetricKind.ROBUSTNESS:
        if kind is MetricKind.ROBUSTNESS and not isinstance(t, AdversarialSet):
            raise TypeError("robustness is evaluated on an AdversarialSet")
        if len(t) == 0:
            raise DataError("evaluation set is empty")
        return sample_gradients(t.X, t.y, m).sum(axis=0)

    Xt = np.hstack([t.X, np.ones((len(t), 1))])
    if kind is MetricKind.DP:
        g0, g1 = _group_masks(t)
        p = expit(t.X @ m.theta + m.intercept)
        diff = p[g0].mean() - p[g1].mean()
        dp = (p * (1.0 - p))[:, None] * Xt
        inner = dp[g0].mean(axis=0) - dp[g1].mean(axis=0)
    else:
        g0, g1 = _group_masks(t, positives_only=True)
        ell = sample_losses(t.X, t.y, m)
        diff = ell[g1].mean() - ell[g0].mean()
        G = sample_gradients(t.X, t.y, m)
        inner = G[g1].mean(axis=0) - G[g0].mean(axis=0)
    return np.sign(diff) * inner
