"""Weight discovery: a ridge-penalized linear objective under two linear constraints.

    minimize    -eps . i_metric + lam * |eps|^2
    subject to  eps . i_util   >= 0          (utility may not get worse)
                eps . i_metric <= delta      (metric may not overshoot)

``solve_analytic`` evaluates the four closed-form active-set candidates and
returns the one that passes a full KKT check. ``solve_numeric`` is an
independent route (projected gradient on the two-variable dual, then an exact
solve on the identified active set) used as an oracle and as the fallback.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import axpby, compensated_dot, gram_pair
from .errors import QPIterationError
from .model import ModelParams

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1.0
# relative tolerance for case-condition and feasibility comparisons
REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class QpInstance:
    i_metric: np.ndarray
    i_util: np.ndarray
    lam: float = DEFAULT_LAMBDA
    delta: float = 0.0

    def __post_init__(self):
        a = np.ascontiguousarray(self.i_metric, dtype=np.float64)
        u = np.ascontiguousarray(self.i_util, dtype=np.float64)
        if a.ndim != 1 or a.shape != u.shape:
            raise ValueError("influence vectors must be 1-D and of equal length")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(u))):
            raise ValueError("influence vectors must be finite")
        object.__setattr__(self, "i_metric", a)
        object.__setattr__(self, "i_util", u)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n(self) -> int:
        return self.i_metric.shape[0]

    def gram(self) -> tuple[float, float, float]:
        """Compensated ``(a.a, u.u, a.u)`` with ``a = i_metric``, ``u = i_util``."""
        return gram_pair(self.i_metric, self.i_util)

    def objective(self, eps) -> float:
        eps = np.ascontiguousarray(eps, dtype=np.float64)
        return -compensated_dot(eps, self.i_metric) + self.lam * compensated_dot(eps, eps)


@dataclass(frozen=True, eq=False)
class WeightVector:
    eps: np.ndarray
    case_id: int
    dual_beta1: float = 0.0
    dual_beta2: float = 0.0
    solver: str = "analytic"
    diagnostic: str | None = None
    snapshot: ModelParams | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.eps.shape[0]

    def with_snapshot(self, m: ModelParams) -> "WeightVector":
        return WeightVector(self.eps, self.case_id, self.dual_beta1, self.dual_beta2,
                            self.solver, self.diagnostic, m)


def kkt_residuals(q: QpInstance, eps, beta1: float, beta2: float) -> dict[str, float]:
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    a, u = q.i_metric, q.i_util
    eu = compensated_dot(eps, u)
    ea = compensated_dot(eps, a)
    stat = -a + 2 * q.lam * eps - beta1 * u + beta2 * a
    return {
        "stationarity": float(np.max(np.abs(stat))) if q.n else 0.0,
        "utility_violation": max(0.0, -eu),
        "metric_violation": max(0.0, ea - q.delta),
        "slack_utility": abs(beta1 * eu),
        "slack_metric": abs(beta2 * (ea - q.delta)),
        "dual_violation": max(0.0, -beta1, -beta2),
    }


def _candidates(aa: float, uu: float, au: float, lam: float, delta: float):
    """Yield ``(case_id, alpha, beta, beta1, beta2)`` for each closed form that is
    defined, where the candidate is ``eps = alpha * i_metric + beta * i_util``."""
    yield 1, 1 / (2 * lam), 0.0, 0.0, 0.0
    yield 2, delta / aa, 0.0, 0.0, 1.0 - 2 * lam * delta / aa
    if uu > 0:
        yield 3, 1 / (2 * lam), -au / (uu * 2 * lam), -au / uu, 0.0
        denom = aa * uu - au * au
        if denom > REL_TOL * aa * uu:
            yield (4, delta * uu / denom, -delta * au / denom,
                   -2 * lam * delta * au / denom, 1.0 - 2 * lam * delta * uu / denom)


def _passes_kkt(q: QpInstance, gram, alpha, beta, beta1, beta2) -> bool:
    """KKT check for a candidate in the span of the two influence vectors.

    Every quantity the certificate needs is a combination of the Gram entries:
    the stationarity vector is ``ca * i_metric + cu * i_util`` and the two
    constraint values are inner products of the span coefficients.
    """
    aa, uu, au = gram
    lam, delta = q.lam, q.delta
    ea = alpha * aa + beta * au
    eu = alpha * au + beta * uu
    ca = -1.0 + 2 * lam * alpha + beta2
    cu = 2 * lam * beta - beta1
    stat = math.sqrt(max(ca * ca * aa + cu * cu * uu + 2 * ca * cu * au, 0.0))
    norm_a, norm_u = math.sqrt(aa), math.sqrt(uu)
    norm_e = math.sqrt(max(alpha * alpha * aa + beta * beta * uu + 2 * alpha * beta * au, 0.0))
    scale_stat = max(norm_a, 2 * lam * norm_e, abs(beta1) * norm_u, abs(beta2) * norm_a, 1e-300)
    tol = 1e3 * REL_TOL
    # constraint values are judged against the size of the terms they sum
    terms = abs(alpha) * norm_a + abs(beta) * norm_u
    return (
        stat <= tol * scale_stat
        and eu >= -tol * terms * norm_u
        and ea - delta <= tol * max(delta, terms * norm_a)
        and beta1 >= -tol * max(1.0, abs(beta2))
        and beta2 >= -tol * max(1.0, abs(beta1))
    )


def _is_kkt_point(q: QpInstance, eps, beta1: float, beta2: float) -> bool:
    """Full O(n) KKT check of an arbitrary vector; used by the numeric route."""
    a, u = q.i_metric, q.i_util
    top = float(np.max(np.abs(eps))) if q.n else 0.0
    # scaled so that tiny eps does not underflow to a zero norm
    norm_e = top * math.sqrt(compensated_dot(eps / top, eps / top)) if top > 0 else 0.0
    aa, uu, _ = q.gram()
    norm_a, norm_u = math.sqrt(aa), math.sqrt(uu)
    r = kkt_residuals(q, eps, beta1, beta2)
    # every residual is compared against the size of the terms it cancels
    scale_stat = max(norm_a, 2 * q.lam * float(np.max(np.abs(eps))),
                     abs(beta1) * norm_u, abs(beta2) * norm_a, 1e-300)
    tol = 1e3 * REL_TOL
    # eps = ((1 - beta2) a + beta1 u) / (2 lam) carries rounding of its terms' size
    terms = max(norm_e, (abs(1 - beta2) * norm_a + abs(beta1) * norm_u) / (2 * q.lam))
    tol_u = tol * terms * norm_u
    tol_m = tol * max(q.delta, terms * norm_a)
    ea = compensated_dot(eps, a)
    eu = compensated_dot(eps, u)
    # a positive multiplier needs its constraint to hold with equality
    if beta1 > tol and abs(eu) > tol_u:
        return False
    if beta2 > tol and abs(ea - q.delta) > tol_m:
        return False
    return (
        r["stationarity"] <= tol * scale_stat
        and r["utility_violation"] <= tol_u
        and r["metric_violation"] <= tol_m
        and beta1 >= -tol * max(1.0, abs(beta2))
        and beta2 >= -tol * max(1.0, abs(beta1))
    )


def solve_analytic(q: QpInstance) -> WeightVector:
    """Closed-form solution; the lowest case id whose candidate is a KKT point wins."""
    gram = q.gram()
    aa, uu, au = gram
    if aa == 0.0:  # zero, or so small that its square underflows
        return WeightVector(np.zeros(q.n), 1, diagnostic="zero metric influence: nothing to optimize")
    if uu > 0 and au < 0 and aa * uu - au * au <= REL_TOL * aa * uu:
        logger.debug("parallel influence vectors; using numeric solver")
        w = solve_numeric(q)
        return _with_diagnostic(w, "parallel influence vectors; numeric fallback")
    for case_id, alpha, beta, b1, b2 in _candidates(aa, uu, au, q.lam, q.delta):
        if _passes_kkt(q, gram, alpha, beta, b1, b2):
            eps = axpby(alpha, q.i_metric, beta, q.i_util)
            return WeightVector(eps, case_id, max(b1, 0.0), max(b2, 0.0))
    logger.warning("no closed-form candidate passed the KKT check; using numeric solver")
    return _with_diagnostic(solve_numeric(q), "no analytic candidate KKT-feasible; numeric fallback")


def _with_diagnostic(w: WeightVector, msg: str) -> WeightVector:
    return WeightVector(w.eps, w.case_id, w.dual_beta1, w.dual_beta2, "numeric", msg)


def classify_case(q: QpInstance) -> int:
    return solve_analytic(q).case_id


def _case_from_duals(b1: float, b2: float) -> int:
    return {(False, False): 1, (False, True): 2, (True, False): 3, (True, True): 4}[(b1 > 0, b2 > 0)]


def solve_numeric(q: QpInstance, max_iter: int = 200_000, check_every: int = 25) -> WeightVector:
    """Accelerated projected gradient ascent on the dual, polished on the active set.

    The dual lives in two variables, so iterations only touch the Gram entries
    ``a.a, u.u, a.u``; ``eps`` is formed once at the end.
    """
    a, u, lam, delta = q.i_metric, q.i_util, q.lam, q.delta
    aa, uu, au = q.gram()
    if aa == 0.0:
        return WeightVector(np.zeros(q.n), 1, solver="numeric")
    # dual gradient: (-eps.u, eps.a - delta) with eps = ((1-b2) a + b1 u) / (2 lam)
    G = np.array([[uu, -au], [-au, aa]]) / (2 * lam)
    c = np.array([-au / (2 * lam), aa / (2 * lam) - delta])
    # Jacobi scaling: iterate on d * b so both multipliers see unit curvature;
    # positive scaling leaves the nonnegativity constraints unchanged
    d = np.sqrt(np.diag(G))
    d[d == 0] = 1.0
    Gs = G / np.outer(d, d)
    cs = c / d

    def grad(bs):
        return cs - Gs @ bs

    L = max(float(np.linalg.eigvalsh(Gs)[-1]), 1e-300)
    bs = np.zeros(2)
    z = bs.copy()
    t = 1.0
    for it in range(1, max_iter + 1):
        b_next = np.maximum(z + grad(z) / L, 0.0)
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        z = b_next + ((t - 1) / t_next) * (b_next - bs)
        bs, t = b_next, t_next
        if it % check_every == 0 or it == max_iter:
            polished = _polish(q, Gs, bs)
            if polished is not None:
                return polished
    b = bs / d
    eps = ((1 - b[1]) * a + b[0] * u) / (2 * lam)
    raise QPIterationError("dual projected gradient hit the iteration cap", eps,
                           kkt_residuals(q, eps, b[0], b[1]))


def _polish(q: QpInstance, Gs, bs) -> WeightVector | None:
    """Solve exactly on the active set suggested by the scaled multipliers
    ``bs``; accept only a KKT point.

    A multiplier too small to call either way, zero included, is tried both
    inactive and active.
    """
    scale = max(1.0, float(np.max(np.abs(bs))))
    sure = [i for i in range(2) if bs[i] > 1e-6 * scale]
    unsure = [i for i in range(2) if bs[i] <= 1e-6 * scale]
    options = [sure]
    for i in unsure:
        options += [sorted(s + [i]) for s in options]
    if np.linalg.det(Gs) <= 1e-6:
        # nearly parallel influence vectors: the dual is too ill-conditioned
        # for the iterate to settle, or its optimum is a whole segment
        options += [o for o in ([0], [1], [], [0, 1]) if o not in options]
    for active in options:
        w = _solve_on(q, active)
        if w is not None:
            return w
    return None


def _solve_on(q: QpInstance, active) -> WeightVector | None:
    """Equality-constrained solve on an active set.

    Stationarity gives ``eps = (gamma * i_metric + beta1 * i_util) / (2 lam)``
    with ``gamma = 1 - beta2``. Working in ``gamma`` imposes an active metric
    constraint as ``eps.a = delta`` directly, so ``eps`` never comes from the
    difference ``1 - beta2`` when that multiplier is near one.
    """
    aa, uu, au = q.gram()
    two_lam = 2 * q.lam
    gamma, beta1 = 1.0, 0.0
    if active == [1]:
        gamma = two_lam * q.delta / aa
    elif active == [0]:
        if uu == 0:
            return None
        beta1 = -au / uu
    elif active == [0, 1]:
        # symmetric Jacobi scaling keeps lstsq from discarding a small but real direction
        dm = np.sqrt([aa, uu]) if uu > 0 else np.array([math.sqrt(aa), 1.0])
        M = np.array([[aa, au], [au, uu]]) / np.outer(dm, dm)
        sol = np.linalg.lstsq(M, np.array([two_lam * q.delta, 0.0]) / dm, rcond=None)[0]
        gamma, beta1 = sol / dm
    beta2 = 1.0 - gamma if 1 in active else 0.0
    if beta1 < 0 or beta2 < 0:
        return None
    eps = (gamma * q.i_metric + beta1 * q.i_util) / two_lam
    if not _is_kkt_point(q, eps, beta1, beta2):
        return None
    return WeightVector(eps, _case_from_duals(beta1, beta2), float(beta1), float(beta2),
                        solver="numeric")
