# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled P1 p-Dirichlet energy kernels (same signatures as _kernels_py).

Powers s^(p/2) with 2p an integer are evaluated by sqrt/multiply chains, and
(1+x)^a - 1 by its binomial series for small x; both dominate runtime.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow, expm1, log1p, sqrt, fabs, floor

cnp.import_array()

# below this |x| the binomial series converges to full precision in <= 24 terms
cdef double SERIES_CUT = 0.125


cdef inline int _quarter_index(double half) noexcept nogil:
    cdef double q = 4.0 * half
    if q == floor(q) and q >= 0 and q <= 64:
        return <int>q
    return -1


cdef inline double _spow(double s, double half, int n4) noexcept nogil:
    """s ** half, exact-structure fast path when 4*half is a small integer."""
    cdef double r, out
    cdef int i
    if n4 < 0:
        return pow(s, half)
    out = 1.0
    if n4 & 1:
        out = sqrt(sqrt(s))
    if n4 & 2:
        out *= sqrt(s)
    r = s
    i = n4 >> 2
    while i:
        if i & 1:
            out *= r
        r *= r
        i >>= 1
    return out


cdef inline double _pow1pm1(double x, double a) noexcept nogil:
    """(1 + x)^a - 1 without cancellation."""
    cdef double term, total
    cdef int k
    if fabs(x) >= SERIES_CUT:
        return expm1(a * log1p(x))
    term = a * x
    total = term
    for k in range(1, 40):
        term *= (a - k) * x / (k + 1)
        total += term
        if fabs(term) <= 1e-17 * fabs(total):
            break
    return total


cdef inline void _grad(const long* tri, const double* G, const double* v,
                       Py_ssize_t m, double* gx, double* gy) noexcept nogil:
    cdef const long* t = tri + 3 * m
    cdef const double* g = G + 6 * m
    cdef double a = v[t[0]], b = v[t[1]], c = v[t[2]]
    gx[0] = a * g[0] + b * g[2] + c * g[4]
    gy[0] = a * g[1] + b * g[3] + c * g[5]


def energy(const long[:, ::1] triangles, const double[:, :, ::1] G,
           const double[::1] areas, const double[::1] values, double p, double eps):
    cdef Py_ssize_t m, M = triangles.shape[0]
    cdef double gx, gy, s, E = 0.0, half = 0.5 * p, e2 = eps * eps
    cdef int n4 = _quarter_index(half)
    with nogil:
        for m in range(M):
            _grad(&triangles[0, 0], &G[0, 0, 0], &values[0], m, &gx, &gy)
            s = gx * gx + gy * gy + e2
            E += areas[m] * _spow(s, half, n4)
    return E


def energy_grad(const long[:, ::1] triangles, const double[:, :, ::1] G,
                const double[::1] areas, const double[::1] values, double p, double eps):
    cdef Py_ssize_t m, i, M = triangles.shape[0]
    cdef double gx, gy, s, sp, coef, E = 0.0, half = 0.5 * p, e2 = eps * eps
    cdef int n4 = _quarter_index(half)
    out = np.zeros(values.shape[0])
    cdef double[::1] grad = out
    with nogil:
        for m in range(M):
            _grad(&triangles[0, 0], &G[0, 0, 0], &values[0], m, &gx, &gy)
            s = gx * gx + gy * gy + e2
            if s > 0:
                sp = _spow(s, half, n4)
                E += areas[m] * sp
                coef = p * areas[m] * sp / s
                for i in range(3):
                    grad[triangles[m, i]] += coef * (G[m, i, 0] * gx + G[m, i, 1] * gy)
    return E, out


def energy_delta(const long[:, ::1] triangles, const double[:, :, ::1] G,
                 const double[::1] areas, const double[::1] values, const double[::1] step,
                 double p, double eps):
    cdef Py_ssize_t m, M = triangles.shape[0]
    cdef double gx, gy, dx, dy, s0, ds, inc, total = 0.0, half = 0.5 * p, e2 = eps * eps
    cdef int n4 = _quarter_index(half)
    with nogil:
        for m in range(M):
            _grad(&triangles[0, 0], &G[0, 0, 0], &step[0], m, &dx, &dy)
            if dx == 0.0 and dy == 0.0:
                continue
            _grad(&triangles[0, 0], &G[0, 0, 0], &values[0], m, &gx, &gy)
            s0 = gx * gx + gy * gy + e2
            ds = 2.0 * (gx * dx + gy * dy) + dx * dx + dy * dy
            if s0 > 0:
                inc = _spow(s0, half, n4) * _pow1pm1(ds / s0, half)
            elif ds > 0:
                inc = _spow(ds, half, n4)
            else:
                inc = 0.0
            total += areas[m] * inc
    return total
