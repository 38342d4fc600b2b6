"""Pure-numpy fallback for the compiled kernels in ``_core.pyx``."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit


def logistic_accumulate(X, y, w, theta, intercept, want_hessian=True):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    n, d = X.shape
    if theta.shape[0] != d or y.shape[0] != n or w.shape[0] != n:
        raise ValueError("dimension mismatch")
    margin = X @ theta + intercept
    loss = float(np.dot(w, np.logaddexp(0.0, margin) - y * margin))
    s = expit(margin)
    r = w * (s - y)
    grad = np.empty(d + 1)
    grad[:d] = X.T @ r
    grad[d] = r.sum()
    if not want_hessian:
        return loss, grad, None
    Xt = np.hstack([X, np.ones((n, 1))])
    c = w * s * (1.0 - s)
    hess = Xt.T @ (c[:, None] * Xt)
    hess = 0.5 * (hess + hess.T)
    return loss, grad, hess


def compensated_dot(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    return math.fsum(a * b)


def gram_pair(a, u):
    a = np.asarray(a, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if a.shape != u.shape:
        raise ValueError("dimension mismatch")
    return math.fsum(a * a), math.fsum(u * u), math.fsum(a * u)


def axpby(alpha, a, beta, u):
    a = np.asarray(a, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if a.shape != u.shape:
        raise ValueError("dimension mismatch")
    return alpha * a + beta * u
