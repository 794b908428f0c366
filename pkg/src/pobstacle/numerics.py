"""Shared numerical kernels: adaptive Gauss-Kronrod quadrature, bracketed
monotone inversion and second-order finite differences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# 15-point Kronrod nodes on [-1, 1] (non-negative half) and weights; the
# odd-indexed nodes are the 7-point Gauss nodes.  Values from QUADPACK.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[1:7:2] = _WG[:3]
GAUSS_WEIGHTS[7] = _WG[3]
GAUSS_WEIGHTS[9:15:2] = _WG[2::-1]

MAX_DEPTH = 60
MAX_PANELS = 10**6


class QuadratureError(RuntimeError):
    """Raised when the panel budget or depth cap is hit before the tolerance.

    The best available estimate is attached as ``result``.
    """

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error_estimate: float
    panels: int


def gk15(f, a, b):
    """Apply the 15-point Kronrod rule to every panel ``[a[i], b[i]]``.

    ``f`` must accept an array of shape ``(npanels, 15)`` and return either the
    same shape or ``(m, npanels, 15)`` for an ``m``-component integrand.
    Returns ``(kronrod, |kronrod - gauss|)`` with the leading component axis
    preserved.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = mid[:, None] + half[:, None] * NODES[None, :]
    fx = np.asarray(f(x), dtype=float)
    if fx.shape != x.shape and fx.shape[-2:] != x.shape:
        fx = np.broadcast_to(fx, x.shape)
    k = (fx @ KRONROD_WEIGHTS) * half
    g = (fx @ GAUSS_WEIGHTS) * half
    return k, np.abs(k - g)


def adaptive_partition(f, a, b, tol, max_panels=MAX_PANELS, max_depth=MAX_DEPTH):
    """Split ``[a, b]`` into panels whose summed error estimate is below ``tol``.

    A panel of width ``w`` is accepted once its estimate drops below
    ``tol * w / (b - a)``; rejected panels are bisected in vectorised rounds.
    Returns ``(edges, values, errors)`` sorted left to right; ``values`` and
    ``errors`` carry a leading component axis when ``f`` is vector valued.
    """
    if b < a:
        raise ValueError("need a <= b")
    if b == a:
        return np.array([a, b]), np.zeros(1), np.zeros(1)
    length = b - a
    lo = np.array([a], dtype=float)
    hi = np.array([b], dtype=float)
    done_lo, done_hi, done_val, done_err = [], [], [], []
    depth = 0
    while lo.size:
        val, err = gk15(f, lo, hi)
        worst = err.max(axis=0) if err.ndim > 1 else err
        ok = worst <= tol * (hi - lo) / length
        # a panel that cannot be split further in floating point is accepted
        tiny = (hi - lo) <= 4 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
        ok |= tiny
        done_lo.append(lo[ok])
        done_hi.append(hi[ok])
        done_val.append(val[..., ok])
        done_err.append(err[..., ok])
        lo, hi = lo[~ok], hi[~ok]
        if not lo.size:
            break
        depth += 1
        npan = sum(x.size for x in done_lo) + 2 * lo.size
        if depth > max_depth or npan > max_panels:
            done_lo.append(lo)
            done_hi.append(hi)
            done_val.append(val[..., ~ok])
            done_err.append(err[..., ~ok])
            edges, values, errors = _assemble(done_lo, done_hi, done_val, done_err)
            total_err = float(np.max(np.sum(np.atleast_2d(errors), axis=-1)))
            best = QuadratureResult(float(np.sum(np.atleast_2d(values)[0])),
                                    total_err, edges.size - 1)
            raise QuadratureError(
                f"tolerance {tol:g} not reached (estimate {total_err:.3e}, "
                f"depth {depth}, {npan} panels)", best)
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
    return _assemble(done_lo, done_hi, done_val, done_err)


def _assemble(los, his, vals, errs):
    lo = np.concatenate(los)
    hi = np.concatenate(his)
    val = np.concatenate(vals, axis=-1)
    err = np.concatenate(errs, axis=-1)
    order = np.argsort(lo, kind="stable")
    edges = np.append(lo[order], hi[order][-1])
    return edges, val[..., order], err[..., order]


def integrate_adaptive(f, a, b, tol=1e-12):
    """Integrate a smooth ``f`` over ``[a, b]`` to absolute tolerance ``tol``.

    ``f`` should accept numpy arrays; scalar-only callables are vectorised.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if b < a:
        raise ValueError("need a <= b")

    def fv(x):
        try:
            fx = f(x)
        except TypeError:
            fx = np.vectorize(lambda t: float(f(t)))(x)
        return np.broadcast_to(np.asarray(fx, dtype=float), x.shape)

    edges, vals, errs = adaptive_partition(fv, a, b, tol)
    value = math.fsum(vals.tolist())
    return QuadratureResult(value, float(errs.sum()), max(edges.size - 1, 1))


def invert_monotone(f, target, lo, hi, tol=1e-12, fprime=None, max_iter=200):
    """Solve ``f(x) = target`` for strictly monotone ``f`` bracketed by ``[lo, hi]``.

    Newton steps with ``fprime`` (when given) are taken whenever they stay
    inside the current bracket; bisection otherwise.  Works for increasing or
    decreasing ``f`` and either ordering of the bracket ends.
    """
    if lo > hi:
        lo, hi = hi, lo
    flo, fhi = f(lo) - target, f(hi) - target
    thresh = tol * (1.0 + abs(target))
    if abs(flo) <= thresh:
        return lo
    if abs(fhi) <= thresh:
        return hi
    if flo * fhi > 0:
        raise ValueError(
            f"target {target!r} not bracketed: f(lo)={flo + target!r}, f(hi)={fhi + target!r}")
    increasing = fhi > 0
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        fx = f(x) - target
        if abs(fx) <= thresh:
            return x
        if (fx > 0) == increasing:
            hi = x
        else:
            lo = x
        step_ok = False
        if fprime is not None:
            d = fprime(x)
            if d != 0:
                xn = x - fx / d
                step_ok = lo < xn < hi
        x = xn if step_ok else 0.5 * (lo + hi)
        if hi - lo <= 4 * np.spacing(max(abs(lo), abs(hi))):
            return x
    raise RuntimeError(f"invert_monotone: no convergence after {max_iter} iterations")


def fd_derivative(x, y):
    """Second-order finite-difference derivative of tabulated ``y(x)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 points")
    if x.shape != y.shape:
        raise ValueError("x and y must be aligned")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing")
    return np.gradient(y, x, edge_order=2)
