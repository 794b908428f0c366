"""Obstacles phi with derivatives, the concavity condition on phi and the
quadratic barrier phi + eps |x - x0|^2 / 2 used for nondegeneracy."""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

EPS = np.finfo(float).eps
CRITICAL_TOL = 1e-14


class CriticalPointError(ValueError):
    pass


class VacuousConditionError(ValueError):
    pass


class BarrierSearchError(RuntimeError):
    def __init__(self, message, best_margin):
        super().__init__(message)
        self.best_margin = best_margin


@dataclass(frozen=True)
class Obstacle:
    """Obstacle evaluators acting on points with trailing axis of length ``dim``.

    ``gradient`` returns shape ``(..., dim)`` and ``hessian`` ``(..., dim, dim)``.
    """

    dim: int
    value: object
    gradient: object
    hessian: object
    provenance: tuple = ("builtin-custom",)
    config: dict = field(default=None, compare=False)

    def __call__(self, x):
        return self.value(x)

    @classmethod
    def quadratic(cls, a=0.0, b=1.0, dim=2):
        """phi(x) = a - b |x|^2."""
        if not b > 0:
            raise ValueError("quadratic obstacle needs b > 0")

        def value(x):
            x = np.asarray(x, dtype=float)
            return a - b * np.sum(x * x, axis=-1)

        def gradient(x):
            return -2 * b * np.asarray(x, dtype=float)

        def hessian(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(-2 * b * np.eye(dim), x.shape[:-1] + (dim, dim)).copy()

        return cls(dim, value, gradient, hessian, ("builtin-quadratic", a, b),
                   {"kind": "quadratic", "a": a, "b": b})

    @classmethod
    def custom(cls, value, gradient, hessian, dim=2):
        return cls(dim, value, gradient, hessian, ("builtin-custom",))

    @classmethod
    def finite_difference(cls, value, dim=2, config=None):
        """Wrap a value-only obstacle with central-difference derivatives."""

        def gradient(x):
            x = np.asarray(x, dtype=float)
            h = EPS ** (1 / 3) * (1 + np.linalg.norm(x, axis=-1))[..., None]
            out = np.empty(x.shape)
            for i in range(dim):
                e = np.zeros(dim)
                e[i] = 1.0
                out[..., i] = (value(x + h * e) - value(x - h * e)) / (2 * h[..., 0])
            return out

        def hessian(x):
            x = np.asarray(x, dtype=float)
            h = EPS ** (1 / 4) * (1 + np.linalg.norm(x, axis=-1))
            H = np.empty(x.shape + (dim,))
            f0 = value(x)
            eye = np.eye(dim)
            for i in range(dim):
                hi = h[..., None] * eye[i]
                H[..., i, i] = (value(x + hi) - 2 * f0 + value(x - hi)) / h**2
                for j in range(i + 1, dim):
                    hj = h[..., None] * eye[j]
                    H[..., i, j] = H[..., j, i] = (
                        value(x + hi + hj) - value(x + hi - hj)
                        - value(x - hi + hj) + value(x - hi - hj)) / (4 * h**2)
            return H

        return cls(dim, value, gradient, hessian, ("finite-difference-wrapped",), config)

    @classmethod
    def from_config(cls, cfg):
        kind = cfg.get("kind")
        if kind == "quadratic":
            extra = set(cfg) - {"kind", "a", "b"}
            if extra:
                raise ValueError(f"unknown obstacle keys: {sorted(extra)}")
            return cls.quadratic(float(cfg.get("a", 0.0)), float(cfg.get("b", 1.0)))
        if kind == "expression":
            extra = set(cfg) - {"kind", "formula"}
            if extra:
                raise ValueError(f"unknown obstacle keys: {sorted(extra)}")
            fn = parse_expression(cfg["formula"])
            return cls.finite_difference(lambda x: fn(np.asarray(x, float)[..., 0],
                                                      np.asarray(x, float)[..., 1]),
                                         config=dict(cfg))
        raise ValueError(f"unknown obstacle kind {kind!r}")


# --- expression obstacles ---------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs}
_CONSTS = {"pi": math.pi, "e": math.e}


def parse_expression(formula):
    """Compile an arithmetic formula in ``x1, x2`` to a vectorised callable.

    ``^`` means power, with the usual power precedence.
    """
    try:
        tree = ast.parse(formula.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse obstacle formula {formula!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            check(node.body)
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ValueError(f"operator not allowed in {formula!r}")
            check(node.left)
            check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNARY:
                raise ValueError(f"operator not allowed in {formula!r}")
            check(node.operand)
        elif isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                    and len(node.args) == 1 and not node.keywords):
                raise ValueError(f"unsupported call in {formula!r}")
            check(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in ("x1", "x2", *_CONSTS):
                raise ValueError(f"unknown name {node.id!r} in {formula!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ValueError(f"bad constant in {formula!r}")
        else:
            raise ValueError(f"unsupported syntax {type(node).__name__} in {formula!r}")

    check(tree)

    def ev(node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left, env), ev(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](ev(node.operand, env))
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](ev(node.args[0], env))
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        return float(node.value)

    def fn(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        out = ev(tree.body, {"x1": x1, "x2": np.asarray(x2, dtype=float)})
        return np.broadcast_to(np.asarray(out, dtype=float),
                               np.broadcast(x1, x2).shape).copy()

    return fn


# --- sampling ---------------------------------------------------------------

def disk_sample(n, radius=1.0, center=(0.0, 0.0), seed=0):
    """Scrambled Halton points, area-uniform in a disk."""
    u = qmc.Halton(d=2, scramble=True, seed=seed).random(n)
    r = radius * np.sqrt(u[:, 0])
    t = 2 * math.pi * u[:, 1]
    return np.column_stack([center[0] + r * np.cos(t), center[1] + r * np.sin(t)])


def grid_in_disk(n_side, radius=1.0, center=(0.0, 0.0)):
    """Tensor grid points of [-R, R]^2 that fall in the closed disk."""
    t = np.linspace(-radius, radius, n_side)
    X, Y = np.meshgrid(t, t, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pts = pts[np.sum(pts**2, axis=1) <= radius**2 * (1 + 1e-12)]
    return pts + np.asarray(center, dtype=float)


def polar_sample(n_r, n_theta, radius, center=(0.0, 0.0)):
    r = radius * np.arange(1, n_r + 1) / n_r
    t = 2 * math.pi * np.arange(n_theta) / n_theta
    R, T = np.meshgrid(r, t, indexing="ij")
    pts = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
    return np.vstack([[0.0, 0.0], pts]) + np.asarray(center, dtype=float)


# --- operators --------------------------------------------------------------

def _normalized(grad, hess, p):
    g2 = np.sum(grad * grad, axis=-1)
    lap = np.trace(hess, axis1=-2, axis2=-1)
    ghg = np.einsum("...i,...ij,...j->...", grad, hess, grad)
    with np.errstate(invalid="ignore", divide="ignore"):
        return lap + (p - 2) * ghg / g2


def _critical(grad, x):
    return np.linalg.norm(grad, axis=-1) <= CRITICAL_TOL * (1 + np.linalg.norm(x, axis=-1))


def normalized_p_laplacian(obstacle, p, x):
    """|D phi|^{2-p} Delta_p phi = Delta phi + (p-2) <D phi, D^2 phi D phi>/|D phi|^2."""
    x = np.asarray(x, dtype=float)
    grad = obstacle.gradient(x)
    if np.any(_critical(grad, x)):
        raise CriticalPointError("normalized p-Laplacian undefined at critical point")
    out = _normalized(grad, obstacle.hessian(x), p)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ConcavityReport:
    margin_c0: float
    worst_point: tuple
    sample_size: int
    critical_skipped: int = 0

    def as_dict(self):
        return {"margin_c0": self.margin_c0, "worst_point": list(self.worst_point),
                "sample_size": self.sample_size, "critical_skipped": self.critical_skipped}


def concavity_check(obstacle, p, domain_sample):
    pts = np.atleast_2d(np.asarray(domain_sample, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("empty sample")
    grad = obstacle.gradient(pts)
    crit = _critical(grad, pts)
    if np.all(crit):
        raise VacuousConditionError("condition vacuous on sample: every point is critical")
    vals = _normalized(grad[~crit], obstacle.hessian(pts[~crit]), p)
    i = int(np.argmax(vals))
    return ConcavityReport(float(-vals[i]), tuple(float(c) for c in pts[~crit][i]),
                           int(pts.shape[0]), int(crit.sum()))


def hessian_bound_check(obstacle, p, c0, sample):
    """Is |D^2 phi| >= c0/(n+p-2) on the sample?  Returns ``(ok, min_ratio)``."""
    if not c0 > 0:
        raise ValueError("c0 must be positive")
    pts = np.atleast_2d(np.asarray(sample, dtype=float))
    H = obstacle.hessian(pts)
    norms = np.max(np.abs(np.linalg.eigvalsh(H)), axis=-1)
    n = obstacle.dim
    ratio = norms * (n + p - 2) / c0
    rmin = float(ratio.min())
    return rmin >= 1.0 - 1e-12, rmin


@dataclass(frozen=True)
class BarrierResult:
    """Numerical (sample-based) certificate that phi + eps|x-x0|^2/2 is
    p-superharmonic in B_delta(x0); not a proof."""

    epsilon: float
    delta: float
    certificate_points: np.ndarray
    max_operator_value: float
    x0: tuple = (0.0, 0.0)
    p: float = 2.0
    spacing_choice: dict = None

    def as_dict(self):
        return {"epsilon": self.epsilon, "delta": self.delta, "x0": list(self.x0),
                "p": self.p, "max_operator_value": self.max_operator_value,
                "n_certificate_points": int(len(self.certificate_points)),
                "spacing_choice": self.spacing_choice}


def barrier_operator(obstacle, p, x0, eps, pts):
    """Normalized p-Laplacian of phi + eps|x - x0|^2/2 at ``pts``; NaN where
    the perturbed gradient vanishes."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    d = pts - np.asarray(x0, dtype=float)
    grad = obstacle.gradient(pts) + eps * d
    hess = obstacle.hessian(pts) + eps * np.eye(obstacle.dim)
    vals = _normalized(grad, hess, p)
    return np.where(_critical(grad, pts), np.nan, vals)


def eigen_spacing_epsilon(eigs, theta):
    """eps = (k + 1/2) theta with no eigenvalue in (-(k+1) theta, -k theta)."""
    eigs = np.asarray(eigs, dtype=float)
    n = eigs.size
    for k in range(1, n + 2):
        if not np.any((eigs > -(k + 1) * theta) & (eigs < -k * theta)):
            eps = (k + 0.5) * theta
            bound = eps / (2 * (n + 2))
            return {"k": k, "theta": theta, "epsilon": eps,
                    "min_gap": float(np.min(np.abs(eigs + eps))), "bound": bound,
                    "holds": bool(np.all(np.abs(eigs + eps) >= bound))}
    raise AssertionError("pigeonhole: some spacing interval is always free")


def barrier_search(obstacle, p, x0, c0, n_r=48, n_theta=96, max_halvings=30,
                   neighborhood=0.5, seed=0):
    """Grid search over eps = c0/2^m, delta = 2^-m for a verified barrier."""
    x0 = np.asarray(x0, dtype=float)
    if np.linalg.norm(obstacle.gradient(x0)) > 1e-10:
        raise ValueError("barrier_search needs a critical point of phi")
    near = disk_sample(2048, neighborhood, x0, seed)
    rep = concavity_check(obstacle, p, near)
    if rep.margin_c0 < c0 * (1 - 1e-9):
        raise BarrierSearchError(
            f"concavity margin {rep.margin_c0:.6g} below c0={c0:g} near x0", -rep.margin_c0)
    best = math.inf
    for m in range(max_halvings + 1):
        eps = c0 / 2**m
        for j in range(max_halvings + 1):
            delta = 2.0**-j
            pts = polar_sample(n_r, n_theta, delta, x0)
            vals = barrier_operator(obstacle, p, x0, eps, pts)
            ok = ~np.isnan(vals)
            worst = float(np.max(vals[ok])) if np.any(ok) else math.inf
            best = min(best, worst)
            if worst <= 0:
                spacing = None
                lam = np.linalg.eigvalsh(obstacle.hessian(x0))
                if lam.max() > 0:
                    spacing = eigen_spacing_epsilon(lam, eps / (obstacle.dim + 2))
                return BarrierResult(eps, delta, pts[ok], worst, tuple(x0), p, spacing)
    raise BarrierSearchError(f"no barrier found; best operator value {best:.6g}", best)
