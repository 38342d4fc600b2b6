"""Regularized logistic regression: loss, derivatives, Hessian solves, training.

Parameters are handled jointly as the vector ``(theta, intercept)``; the ridge
penalty never touches the intercept coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

from . import _backend
from .errors import ConvergenceError, DataError, NotPositiveDefiniteError


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: int
    g: int = 0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise DataError("sample features must be finite")
        if self.y not in (0, 1) or self.g not in (0, 1):
            raise DataError("label and sensitive attribute must be binary")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True, eq=False)
class ModelParams:
    theta: np.ndarray
    intercept: float = 0.0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        theta.setflags(write=False)
        if not (np.all(np.isfinite(theta)) and np.isfinite(self.intercept)):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "intercept", float(self.intercept))

    @classmethod
    def zeros(cls, d: int) -> "ModelParams":
        return cls(np.zeros(d), 0.0)

    @classmethod
    def from_vector(cls, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:-1], float(vec[-1]))

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    @property
    def vector(self) -> np.ndarray:
        return np.append(self.theta, self.intercept)

    def same_as(self, other: "ModelParams") -> bool:
        return (
            isinstance(other, ModelParams)
            and self.intercept == other.intercept
            and np.array_equal(self.theta, other.theta)
        )

    def to_dict(self) -> dict:
        return {"theta": [float(t) for t in self.theta], "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(np.asarray(d["theta"], dtype=np.float64), float(d["intercept"]))


@dataclass(frozen=True)
class TrainConfig:
    l2_reg: float = 1e-3
    damping: float = 1e-4
    grad_tol: float = 1e-8
    max_iters: int = 100

    def __post_init__(self):
        if self.l2_reg < 0 or self.damping < 0:
            raise ValueError("l2_reg and damping must be nonnegative")
        if self.grad_tol <= 0 or self.max_iters < 1:
            raise ValueError("grad_tol must be positive and max_iters >= 1")


def _check_dims(X: np.ndarray, m: ModelParams) -> None:
    if X.ndim != 2 or X.shape[1] != m.dim:
        raise DataError(f"feature dimension {X.shape[-1]} does not match model dimension {m.dim}")


def margins(X, m: ModelParams) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    _check_dims(X, m)
    return X @ m.theta + m.intercept


def predict_proba(X, m: ModelParams) -> np.ndarray:
    return expit(margins(X, m))


def sample_losses(X, y, m: ModelParams) -> np.ndarray:
    """Per-row cross-entropy without the ridge share."""
    z = margins(X, m)
    return np.logaddexp(0.0, z) - np.asarray(y, dtype=np.float64) * z


def sample_gradients(X, y, m: ModelParams, l2_reg: float = 0.0) -> np.ndarray:
    """Rows are the per-sample gradients over ``(theta, intercept)``."""
    X = np.asarray(X, dtype=np.float64)
    r = expit(margins(X, m)) - np.asarray(y, dtype=np.float64)
    G = np.empty((X.shape[0], X.shape[1] + 1))
    G[:, :-1] = r[:, None] * X
    G[:, -1] = r
    if l2_reg:
        G[:, :-1] += l2_reg * m.theta
    return G


def loss(z: Sample, m: ModelParams, l2_reg: float = 0.0) -> float:
    """Cross-entropy of one sample plus its share ``l2_reg/2 * |theta|^2``."""
    ce = sample_losses(z.x[None, :], np.array([z.y]), m)[0]
    return float(ce + 0.5 * l2_reg * np.dot(m.theta, m.theta))


def gradient(z: Sample, m: ModelParams, l2_reg: float = 0.0) -> np.ndarray:
    return sample_gradients(z.x[None, :], np.array([z.y]), m, l2_reg)[0]


def objective(X, y, m: ModelParams, l2_reg: float, weights=None, want_hessian: bool = True):
    """Mean weighted training objective with its gradient and Hessian.

    The objective is ``(1/n) sum_i w_i (ce_i + l2_reg/2 |theta|^2)`` with ``n``
    the row count of ``X`` (zero weights drop rows without renormalizing).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    _check_dims(X, m)
    n, d = X.shape
    if n == 0:
        raise DataError("empty dataset")
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    data_loss, g, H = _backend.logistic_accumulate(X, y, w, m.theta, m.intercept, want_hessian)
    wmean = float(w.sum()) / n
    theta = m.theta
    f = data_loss / n + wmean * 0.5 * l2_reg * float(np.dot(theta, theta))
    g = g / n
    g[:d] += wmean * l2_reg * theta
    if H is not None:
        H = H / n
        H[np.arange(d), np.arange(d)] += wmean * l2_reg
    return f, g, H


def hessian(X, y, m: ModelParams, cfg: TrainConfig) -> np.ndarray:
    """Damped mean Hessian used for influence solves."""
    _, _, H = objective(X, y, m, cfg.l2_reg)
    if cfg.damping:
        H[np.diag_indices_from(H)] += cfg.damping
    return H


class HessianFactor:
    """Cholesky factorization of a symmetric positive definite matrix."""

    def __init__(self, h):
        h = np.asarray(h, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("Hessian must be square")
        self.matrix = h
        try:
            self._factor = scipy.linalg.cho_factor(h, lower=True, check_finite=True)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(np.linalg.eigvalsh(0.5 * (h + h.T))[0]) from None

    def solve(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        u = scipy.linalg.cho_solve(self._factor, v, check_finite=False)
        if __debug__:
            resid = np.max(np.abs(self.matrix @ u - v)) if v.size else 0.0
            bound = 1e-8 * (1.0 + np.max(np.abs(v))) if v.size else 0.0
            assert resid <= bound, f"Hessian solve residual {resid:.3e} exceeds {bound:.3e}"
        return u


def solve_hinv(h, v) -> np.ndarray:
    return HessianFactor(h).solve(v)


def train(X, y, cfg: TrainConfig = TrainConfig(), init: ModelParams | None = None,
          weights=None, grad_tol: float | None = None) -> ModelParams:
    """Damped Newton with backtracking to a stationary point of ``objective``.

    Stops once the infinity-norm of the mean gradient is below ``grad_tol``,
    then takes up to two polishing Newton steps while they keep reducing it,
    so the result does not depend on the starting point beyond rounding.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("training split is empty")
    tol = cfg.grad_tol if grad_tol is None else grad_tol
    m = ModelParams.zeros(X.shape[1]) if init is None else init
    _check_dims(X, m)
    p = m.vector

    def evaluate(vec, hess=True):
        return objective(X, y, ModelParams.from_vector(vec), cfg.l2_reg, weights, hess)

    f, g, H = evaluate(p)
    gnorm = float(np.max(np.abs(g)))
    polish = 0
    for _ in range(cfg.max_iters):
        if gnorm <= tol and polish >= 2:
            break
        step = _newton_step(H, g)
        slope = float(np.dot(g, step))
        t = 1.0
        while True:
            cand = p + t * step
            f_new, g_new, H_new = evaluate(cand)
            gnorm_new = float(np.max(np.abs(g_new)))
            if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                break
            # near the optimum f is flat to rounding; judge the step by the gradient
            if abs(f_new - f) <= 1e-14 * max(1.0, abs(f)) and gnorm_new < gnorm:
                break
            t *= 0.5
        if gnorm <= tol:
            if gnorm_new >= gnorm:
                break
            polish += 1
        p, f, g, H, gnorm = cand, f_new, g_new, H_new, gnorm_new
    if gnorm > tol:
        raise ConvergenceError(
            f"training did not reach gradient tolerance {tol:g} in {cfg.max_iters} iterations",
            gnorm, ModelParams.from_vector(p),
        )
    return ModelParams.from_vector(p)


def _newton_step(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    jitter = 0.0
    scale = max(float(np.max(np.abs(np.diag(H)))), 1e-300)
    for _ in range(8):
        try:
            c = scipy.linalg.cho_factor(H + jitter * np.eye(len(g)), lower=True)
            return -scipy.linalg.cho_solve(c, g)
        except np.linalg.LinAlgError:
            jitter = scale * 1e-12 if jitter == 0.0 else jitter * 100
    return -g
