# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the logistic objective and compensated dot products.

Mirrors ``_core_py`` exactly in signature and semantics.
"""

import numpy as np

from libc.math cimport exp, log1p, fabs


cdef inline double _softplus(double m) noexcept nogil:
    if m > 0.0:
        return m + log1p(exp(-m))
    return log1p(exp(m))


cdef inline double _sigmoid(double m) noexcept nogil:
    cdef double e
    if m >= 0.0:
        return 1.0 / (1.0 + exp(-m))
    e = exp(m)
    return e / (1.0 + e)


def logistic_accumulate(const double[:, ::1] X, const double[::1] y,
                        const double[::1] w, const double[::1] theta,
                        double intercept, bint want_hessian=True):
    """Weighted sums of cross-entropy, its gradient and Hessian over rows.

    Returns ``(loss_sum, grad, hess)`` where grad/hess are over the joint
    ``(theta, intercept)`` coordinates; ``hess`` is None when not requested.
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double m, s, r, c, wi, loss = 0.0
    if theta.shape[0] != d or y.shape[0] != n or w.shape[0] != n:
        raise ValueError("dimension mismatch")

    grad_arr = np.zeros(d + 1, dtype=np.float64)
    cdef double[::1] grad = grad_arr
    hess_arr = np.zeros((d + 1, d + 1), dtype=np.float64) if want_hessian else None
    cdef double[:, ::1] hess
    if want_hessian:
        hess = hess_arr

    with nogil:
        for i in range(n):
            wi = w[i]
            if wi == 0.0:
                continue
            m = intercept
            for j in range(d):
                m = m + X[i, j] * theta[j]
            loss = loss + wi * (_softplus(m) - y[i] * m)
            s = _sigmoid(m)
            r = wi * (s - y[i])
            for j in range(d):
                grad[j] = grad[j] + r * X[i, j]
            grad[d] = grad[d] + r
            if want_hessian:
                c = wi * s * (1.0 - s)
                for j in range(d):
                    for k in range(j, d):
                        hess[j, k] = hess[j, k] + c * X[i, j] * X[i, k]
                    hess[j, d] = hess[j, d] + c * X[i, j]
                hess[d, d] = hess[d, d] + c
        if want_hessian:
            for j in range(d + 1):
                for k in range(j + 1, d + 1):
                    hess[k, j] = hess[j, k]
    return loss, grad_arr, hess_arr


def compensated_dot(const double[::1] a, const double[::1] b):
    """Neumaier-compensated inner product."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i
    cdef double s = 0.0, comp = 0.0, p, t
    if b.shape[0] != n:
        raise ValueError("dimension mismatch")
    with nogil:
        for i in range(n):
            p = a[i] * b[i]
            t = s + p
            if fabs(s) >= fabs(p):
                comp = comp + ((s - t) + p)
            else:
                comp = comp + ((p - t) + s)
            s = t
    return s + comp


cdef inline void _neumaier(double* s, double* comp, double p) noexcept nogil:
    cdef double t = s[0] + p
    if fabs(s[0]) >= fabs(p):
        comp[0] = comp[0] + ((s[0] - t) + p)
    else:
        comp[0] = comp[0] + ((p - t) + s[0])
    s[0] = t


def gram_pair(const double[::1] a, const double[::1] u):
    """Compensated ``(a.a, u.u, a.u)`` in a single pass.

    Products are added in blocks of four before the compensated update. Each
    product is already rounded once, so the error bound stays a small multiple
    of ``eps * sum |a_i u_i|`` while the compensated chain runs a quarter as often.
    """
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i = 0
    cdef double saa = 0.0, caa = 0.0, suu = 0.0, cuu = 0.0, sau = 0.0, cau = 0.0
    cdef double x0, x1, x2, x3, y0, y1, y2, y3
    if u.shape[0] != n:
        raise ValueError("dimension mismatch")
    with nogil:
        while i + 4 <= n:
            x0 = a[i]
            x1 = a[i + 1]
            x2 = a[i + 2]
            x3 = a[i + 3]
            y0 = u[i]
            y1 = u[i + 1]
            y2 = u[i + 2]
            y3 = u[i + 3]
            _neumaier(&saa, &caa, (x0 * x0 + x1 * x1) + (x2 * x2 + x3 * x3))
            _neumaier(&suu, &cuu, (y0 * y0 + y1 * y1) + (y2 * y2 + y3 * y3))
            _neumaier(&sau, &cau, (x0 * y0 + x1 * y1) + (x2 * y2 + x3 * y3))
            i += 4
        while i < n:
            _neumaier(&saa, &caa, a[i] * a[i])
            _neumaier(&suu, &cuu, u[i] * u[i])
            _neumaier(&sau, &cau, a[i] * u[i])
            i += 1
    return saa + caa, suu + cuu, sau + cau


def axpby(double alpha, const double[::1] a, double beta, const double[::1] u):
    """``alpha * a + beta * u`` as a new array, one pass."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i
    if u.shape[0] != n:
        raise ValueError("dimension mismatch")
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = alpha * a[i] + beta * u[i]
    return out
