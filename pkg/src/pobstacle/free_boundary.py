"""Contact sets, free-boundary polylines and the growth/angle/porosity
diagnostics, for analytic evaluators and discrete solutions alike.

An analytic input is any callable mapping an (N, 2) array of points to
N values of u; it is sampled on a disk mesh.  A discrete input is a
:class:`~pobstacle.fem.DiscreteSolution`, read through its P1 interpolant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fem import DiscreteSolution
from .mesh import Domain, build_mesh

ANALYTIC_TOL = 1e-12
DEFAULT_TOL_FACTOR = 4.0
N_ANGLES = 4096
SCAN_RADII = 128
SCAN_ANGLES = 512
BISECT_STEPS = 60


class FreeBoundaryError(ValueError):
    pass


def _is_discrete(u):
    return isinstance(u, DiscreteSolution)


def _gap_function(u, obstacle):
    """Pointwise u - phi for either kind of input."""
    if _is_discrete(u):
        return u.gap_at

    def gap(points):
        pts = np.asarray(points, dtype=float)
        return np.asarray(u(pts), dtype=float) - np.asarray(obstacle.value(pts), dtype=float)

    return gap


def _tolerance(u, tol_factor):
    return tol_factor * u.mesh.h**2 if _is_discrete(u) else ANALYTIC_TOL


@dataclass(frozen=True, eq=False)
class ContactSet:
    mesh: object
    flags: np.ndarray
    tolerance: float
    gap: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.flags.setflags(write=False)
        self.gap.setflags(write=False)

    @property
    def n_contact(self):
        return int(np.count_nonzero(self.flags))


def contact_mask(u, obstacle, tol_factor=DEFAULT_TOL_FACTOR, grid=None):
    """Flag vertices with u - phi <= tolerance.

    Discrete input uses its own mesh and tolerance ``tol_factor * h**2``.
    Analytic input is sampled on ``grid`` (default: unit disk, h = 1/64)
    with tolerance 1e-12.
    """
    if not tol_factor > 0:
        raise ValueError("tol_factor must be positive")
    if _is_discrete(u):
        mesh = u.mesh
        gap = np.array(u.nodal_values) - np.asarray(obstacle.value(mesh.vertices))
    else:
        mesh = grid if grid is not None else build_mesh(Domain.disk(1.0), 1 / 64)
        gap = _gap_function(u, obstacle)(mesh.vertices)
    tol = _tolerance(u, tol_factor)
    return ContactSet(mesh, gap <= tol, float(tol), np.asarray(gap, dtype=float))


@dataclass(frozen=True, eq=False)
class FreeBoundaryCurve:
    segments: np.ndarray  # (S, 2, 2)
    total_length: float
    degenerate: bool = False

    def __post_init__(self):
        self.segments.setflags(write=False)

    @property
    def points(self):
        """Distinct polyline vertices."""
        if len(self.segments) == 0:
            return np.empty((0, 2))
        return np.unique(np.round(self.segments.reshape(-1, 2), 14), axis=0)

    def as_dict(self):
        return {"n_segments": int(len(self.segments)), "total_length": self.total_length,
                "degenerate": self.degenerate}


def _segment_lengths(seg):
    return np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1) if len(seg) else np.empty(0)


def extract_free_boundary(cs):
    """Marching-triangles extraction of the level {u - phi = tolerance}.

    Each triangle with mixed contact flags contributes one segment joining
    the two edge points where the linear interpolant of the gap crosses the
    tolerance.  An all-contact set yields the domain boundary, flagged
    degenerate.
    """
    mesh = cs.mesh
    if cs.flags.all():
        seg = mesh.vertices[mesh.boundary_edges]
        return FreeBoundaryCurve(seg, float(np.sum(_segment_lengths(seg))), degenerate=True)
    f = cs.gap - cs.tolerance
    tri = mesh.triangles
    fl = cs.flags[tri]
    mixed = fl.any(axis=1) & ~fl.all(axis=1)
    tri, fl = tri[mixed], fl[mixed]
    # the odd vertex out is the one whose flag differs from the other two
    odd = np.where(fl.sum(axis=1) == 1, np.argmax(fl, axis=1), np.argmin(fl, axis=1))
    rows = np.arange(len(tri))
    a = tri[rows, odd]
    ends = []
    for shift in (1, 2):
        b = tri[rows, (odd + shift) % 3]
        fa, fb = f[a], f[b]
        denom = fa - fb
        t = np.where(denom != 0, fa / np.where(denom != 0, denom, 1.0), 0.5)
        t = np.clip(t, 0.0, 1.0)
        ends.append(mesh.vertices[a] + t[:, None] * (mesh.vertices[b] - mesh.vertices[a]))
    seg = np.stack(ends, axis=1) if len(tri) else np.empty((0, 2, 2))
    return FreeBoundaryCurve(seg, float(np.sum(_segment_lengths(seg))))


def save_curve(curve, path):
    with open(path, "w") as fh:
        fh.write("x1,y1,x2,y2\n")
        for (x1, y1), (x2, y2) in curve.segments:
            fh.write(f"{x1:.17g},{y1:.17g},{x2:.17g},{y2:.17g}\n")


@dataclass(frozen=True)
class AngleEstimate:
    theta_hat: float
    ring_radii: tuple
    ring_angles: tuple
    fit_slope: float
    levels: tuple = ()

    def as_dict(self):
        return {"theta_hat": self.theta_hat, "ring_radii": list(self.ring_radii),
                "ring_angles": list(self.ring_angles), "fit_slope": self.fit_slope,
                "levels": list(self.levels)}


def _ring_measure(gap, r, level, n_angles=N_ANGLES, center=(0.0, 0.0)):
    """Angular measure of {gap > level} on the circle of radius r.

    Cells whose endpoints disagree are split at the crossing, located by
    bisection on ``gap`` itself; at most one crossing per cell is assumed.
    """
    cx, cy = center
    d = 2 * math.pi / n_angles
    th = np.arange(n_angles) * d
    pos = gap(np.column_stack([cx + r * np.cos(th), cy + r * np.sin(th)])) > level
    nxt = np.roll(pos, -1)
    total = d * np.count_nonzero(pos & nxt)
    cut = np.flatnonzero(pos != nxt)
    if cut.size:
        lo, hi = th[cut].copy(), th[cut] + d
        left_pos = pos[cut]
        for _ in range(BISECT_STEPS):
            mid = 0.5 * (lo + hi)
            pm = gap(np.column_stack([cx + r * np.cos(mid), cy + r * np.sin(mid)])) > level
            same = pm == left_pos
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        c = 0.5 * (lo + hi)
        total += float(np.sum(np.where(left_pos, c - th[cut], th[cut] + d - c)))
    return float(total)


def default_ring_radii(h, radius=1.0, n=9):
    """Rings at fixed physical radii 0.4R..0.8R (see angle_at_origin)."""
    lo = max(0.4 * radius, 5 * h)
    hi = 0.8 * radius
    if lo >= hi:
        raise ValueError(f"h={h} too coarse for ring measurements")
    return tuple(np.linspace(lo, hi, n))


def angle_at_origin(u, obstacle, ring_radii=None, tol_factor=DEFAULT_TOL_FACTOR,
                    n_angles=N_ANGLES):
    """Estimate the aperture of the non-contact cone at the origin.

    On each ring the measure of {u - phi > level} is taken on ``n_angles``
    equispaced angles (crossings refined by bisection) and the result is
    fitted linearly in r; ``theta_hat`` is the intercept at r = 0.

    Analytic input uses level 1e-12.  Discrete input is measured at the two
    levels tau/4 and tau with tau = tol_factor * h**2; since the gap grows
    quadratically away from the free boundary, the measure is affine in
    sqrt(level) and the two are extrapolated to level 0.
    """
    gap = _gap_function(u, obstacle)
    if ring_radii is None:
        if not _is_discrete(u):
            raise ValueError("ring_radii required for analytic input")
        ring_radii = default_ring_radii(u.mesh.h)
    radii = np.asarray(sorted(float(r) for r in ring_radii))
    if _is_discrete(u):
        h = u.mesh.h
        if np.any(radii < 5 * h - 1e-12):
            raise ValueError("ring radii must be >= 5h for discrete input")
        tau = tol_factor * h * h
        levels = (tau / 4, tau)
    else:
        levels = (ANALYTIC_TOL,)
    keep_r, keep_m = [], []
    for r in radii:
        ms = [_ring_measure(gap, r, lv, n_angles) for lv in levels]
        if any(m <= 0.0 or m >= 2 * math.pi for m in ms):
            continue  # ring entirely contact or entirely free
        m = 2 * ms[0] - ms[1] if len(ms) == 2 else ms[0]
        keep_r.append(float(r))
        keep_m.append(float(m))
    if not keep_r:
        raise FreeBoundaryError("every ring is entirely contact or entirely non-contact")
    if len(keep_r) == 1:
        slope, icpt = 0.0, keep_m[0]
    else:
        slope, icpt = np.polyfit(keep_r, keep_m, 1)
    theta_hat = float(min(max(icpt, 0.0), 2 * math.pi))
    return AngleEstimate(theta_hat, tuple(keep_r), tuple(keep_m), float(slope), levels)


@dataclass(frozen=True)
class NondegeneracyReport:
    center: tuple
    radii: tuple
    ratios: tuple
    c1_lower: float
    growth_upper: float
    barrier_epsilon: float | None = None
    barrier_bound_holds: bool | None = None

    def as_dict(self):
        return {"center": list(self.center), "radii": list(self.radii),
                "ratios": list(self.ratios), "c1_lower": self.c1_lower,
                "growth_upper": self.growth_upper, "barrier_epsilon": self.barrier_epsilon,
                "barrier_bound_holds": self.barrier_bound_holds}


def ball_sup(gap, center, r, n_r=SCAN_RADII, n_theta=SCAN_ANGLES):
    """sup of ``gap`` over B_r(center) on a polar sample (center included)."""
    s = r * np.arange(1, n_r + 1) / n_r
    th = 2 * math.pi * np.arange(n_theta) / n_theta
    S, T = np.meshgrid(s, th, indexing="ij")
    pts = np.column_stack([center[0] + (S * np.cos(T)).ravel(),
                           center[1] + (S * np.sin(T)).ravel()])
    pts = np.vstack([np.asarray(center, dtype=float)[None, :], pts])
    return float(np.max(gap(pts)))


def _validate_center(gap, center, tol, probe):
    c = np.asarray(center, dtype=float)
    g0 = float(gap(c[None, :])[0])
    if g0 > 2 * tol:
        raise FreeBoundaryError(f"center {tuple(c)} lies in the non-contact set (gap {g0:.3g})")
    th = 2 * math.pi * np.arange(64) / 64
    ring = c + probe * np.column_stack([np.cos(th), np.sin(th)])
    if np.max(gap(ring)) <= tol:
        raise FreeBoundaryError(f"center {tuple(c)} lies inside the contact set")


def nondegeneracy_scan(u, obstacle, center, radii, barrier=None,
                       tol_factor=DEFAULT_TOL_FACTOR):
    """Ratios c(r) = sup_{B_r(center)} (u - phi) / r**2.

    ``barrier`` is an optional BarrierResult; when given, the report says
    whether c1_lower >= epsilon / 2.
    """
    gap = _gap_function(u, obstacle)
    radii = tuple(float(r) for r in radii)
    if not radii or min(radii) <= 0:
        raise ValueError("radii must be positive")
    tol = _tolerance(u, tol_factor)
    probe = min(radii) / 4
    if _is_discrete(u):
        probe = max(probe, 2 * u.mesh.h)
    _validate_center(gap, center, tol, probe)
    ratios = tuple(max(ball_sup(gap, center, r), 0.0) / r**2 for r in radii)
    c1, cu = min(ratios), max(ratios)
    eps = holds = None
    if barrier is not None:
        eps = float(barrier.epsilon)
        holds = bool(c1 >= eps / 2)
    return NondegeneracyReport(tuple(float(x) for x in center), radii, ratios,
                               float(c1), float(cu), eps, holds)


def nearest_boundary_points(curve, seeds):
    """Polyline vertices nearest to each seed point."""
    pts = curve.points
    if len(pts) == 0:
        raise FreeBoundaryError("empty free boundary")
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    d = np.linalg.norm(pts[None, :, :] - seeds[:, None, :], axis=2)
    return pts[np.argmin(d, axis=1)]


@dataclass(frozen=True)
class PorosityReport:
    centers: tuple
    best_delta: float
    witness_balls: tuple  # ((x, y), radius) per (center, r)
    vacuous: bool = False

    def as_dict(self):
        return {"centers": [list(c) for c in self.centers], "best_delta": self.best_delta,
                "witness_balls": [{"center": list(c), "radius": rad}
                                  for c, rad in self.witness_balls],
                "vacuous": self.vacuous}


def _point_segment_distance(pts, seg):
    """(P, S) distances from points to segments."""
    a, b = seg[:, 0], seg[:, 1]
    ab = b - a
    L2 = np.einsum("sk,sk->s", ab, ab)
    ap = pts[:, None, :] - a[None, :, :]
    t = np.einsum("psk,sk->ps", ap, ab) / np.where(L2 > 0, L2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(pts[:, None, :] - proj, axis=2)


def porosity_scan(fb, cs, centers, radii, n_grid=65):
    """For each (center, r) find the largest ball B_{delta r} inside B_r(center)
    that misses every free-boundary segment, searching an ``n_grid``-square
    grid of candidate sub-ball centers.  best_delta is the minimum over
    (center, r) of the best delta found.

    ``cs`` is accepted for interface symmetry; only the polyline is used.
    """
    centers = [tuple(float(x) for x in c) for c in np.atleast_2d(np.asarray(centers, dtype=float))]
    if len(fb.segments) == 0:
        return PorosityReport(tuple(centers), 1.0, (), vacuous=True)
    seg = np.asarray(fb.segments)
    t = np.linspace(-1.0, 1.0, n_grid)
    GX, GY = np.meshgrid(t, t, indexing="ij")
    unit = np.column_stack([GX.ravel(), GY.ravel()])
    unit = unit[np.einsum("ij,ij->i", unit, unit) < 1.0]
    best = math.inf
    witnesses = []
    for c in centers:
        c_arr = np.asarray(c)
        for r in radii:
            r = float(r)
            # only segments that reach into B_r(c) matter
            near = _point_segment_distance(c_arr[None, :], seg)[0] <= r
            cand = c_arr + r * unit
            room = r - np.linalg.norm(cand - c_arr, axis=1)
            if np.any(near):
                room = np.minimum(room, _point_segment_distance(cand, seg[near]).min(axis=1))
            i = int(np.argmax(room))
            delta = float(room[i] / r)
            witnesses.append((tuple(float(x) for x in cand[i]), float(room[i])))
            best = min(best, delta)
    return PorosityReport(tuple(centers), float(best), tuple(witnesses))


def write_report(report, path):
    with open(path, "w") as fh:
        json.dump(report.as_dict(), fh, indent=2)
        fh.write("\n")
