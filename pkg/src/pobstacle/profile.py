"""Two-homogeneous solutions u = r^2 v(theta) of the p-Laplacian obstacle
problem with obstacle -|x|^2 in the plane.

The profile v is written in phase variables v = rho cos(psi), v' = rho sin(psi).
The angle equation psi' = -(1 + cos^2 psi F_p(psi)) is integrated in the
psi variable, then inverted on a uniform theta grid; rho follows from the
same change of variables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import numerics
from .numerics import gk15, integrate_adaptive

QUAD_TOL = 1e-12
INVERT_TOL = 1e-12
GLOBAL_TOL = 1e-12
DEFAULT_NGRID = 4097

OBSTACLE_SOLUTION = "obstacle-solution"
GLOBAL_PHARMONIC = "global-pharmonic"


class InadmissibleError(ValueError):
    """(p, k) does not yield a solution (opening angle above 2 pi)."""


def _check_p(p):
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p!r}")


def fp_eval(p, psi):
    """F_p(psi) = ((8p-4)cos^2 + (5p-7)sin^2) / (4cos^2 + (p-1)sin^2)."""
    _check_p(p)
    c2 = np.cos(psi) ** 2
    s2 = np.sin(psi) ** 2
    return ((8 * p - 4) * c2 + (5 * p - 7) * s2) / (4 * c2 + (p - 1) * s2)


def fp_dp(p, psi):
    """Partial derivative of F_p in p; strictly positive."""
    _check_p(p)
    c2 = np.cos(psi) ** 2
    return (18 * c2**2 + 12 * c2 + 2) / ((5 - p) * c2 + p - 1) ** 2


def ode_rhs(p, X, Y):
    """v'' as a function of (v, v') = (X, Y)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if np.any((X == 0) & (Y == 0)):
        raise ValueError("ode_rhs undefined at X = Y = 0")
    out = -X * (8 * p * X**2 + (6 * p - 8) * Y**2) / (4 * X**2 + (p - 1) * Y**2)
    return out if out.ndim else float(out)


def angle_speed(p, sigma):
    """1 + cos^2(sigma) F_p(sigma), i.e. -dpsi/dtheta; bounded below by 1/2."""
    return 1.0 + np.cos(sigma) ** 2 * fp_eval(p, sigma)


def _theta_integrand(p, sigma):
    return 1.0 / angle_speed(p, sigma)


def _logrho_integrand(p, sigma):
    # d(log rho)/dsigma along the orbit: (rho'/rho) / psi'
    c = np.cos(sigma)
    F = fp_eval(p, sigma)
    return c * np.sin(sigma) * F / (1.0 + c * c * F)


def theta_of_psi(p, psi, tol=QUAD_TOL):
    """Theta(psi) = integral of 1/(1 + cos^2 F_p) from psi to pi (psi <= pi)."""
    _check_p(p)
    if psi > math.pi:
        raise ValueError("psi must not exceed pi")
    res = integrate_adaptive(lambda s: _theta_integrand(p, s), psi, math.pi, tol)
    return res.value


def theta0_closed_form(p, k):
    _check_p(p)
    if k < 1:
        raise ValueError("k must be a positive integer")
    return 2 * k * math.pi * (1 - math.sqrt((p - 1) / (2 * p)))


def admissible_k(p):
    """List ``(k, kind)`` for every k giving a solution at this p."""
    _check_p(p)
    out = []
    for k in (1, 2, 3):
        t0 = theta0_closed_form(p, k)
        if abs(t0 - 2 * math.pi) <= GLOBAL_TOL:
            out.append((k, GLOBAL_PHARMONIC))
        elif t0 < 2 * math.pi:
            out.append((k, OBSTACLE_SOLUTION))
    return out


def profile_kind(p, k):
    for kk, kind in admissible_k(p):
        if kk == k:
            return kind
    raise InadmissibleError(
        f"(p={p}, k={k}) is not admissible: theta0 = {theta0_closed_form(p, k):.6g} > 2*pi; "
        f"admissible k for p={p}: {admissible_k(p)}")


@dataclass(frozen=True)
class ProfileParams:
    p: float
    k: int = 1
    n_grid: int = DEFAULT_NGRID

    def __post_init__(self):
        _check_p(self.p)
        if self.k not in (1, 2, 3):
            raise InadmissibleError(f"k must be 1, 2 or 3, got {self.k!r}")
        if self.n_grid < 3:
            raise ValueError("n_grid must be at least 3")
        profile_kind(self.p, self.k)

    @property
    def kind(self):
        return profile_kind(self.p, self.k)


@dataclass(frozen=True, eq=False)
class HomogeneousProfile:
    params: ProfileParams
    theta0: float
    theta_grid: np.ndarray
    psi_values: np.ndarray
    rho_values: np.ndarray
    v_values: np.ndarray
    v_prime_values: np.ndarray
    contact_rays: tuple
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("theta_grid", "psi_values", "rho_values", "v_values", "v_prime_values"):
            getattr(self, name).setflags(write=False)
        p = self.params.p
        object.__setattr__(self, "_v_spline", CubicHermiteSpline(
            self.theta_grid, self.v_values, self.v_prime_values))
        vpp = ode_rhs(p, self.v_values, self.v_prime_values)
        object.__setattr__(self, "_vp_spline", CubicHermiteSpline(
            self.theta_grid, self.v_prime_values, vpp))

    @property
    def kind(self):
        return self.params.kind

    def v(self, theta):
        return v_eval(self, theta)

    def u(self, x):
        return u_eval(self, x)


@dataclass(frozen=True)
class ProfileCheckReport:
    ode_residual_max: float
    bc_defects: tuple
    weak_form_defect: float
    symmetry_defect: float
    weak_form_identity_error: float = 0.0

    def as_dict(self):
        return {
            "ode_residual_max": self.ode_residual_max,
            "bc_defects": list(self.bc_defects),
            "weak_form_defect": self.weak_form_defect,
            "symmetry_defect": self.symmetry_defect,
            "weak_form_identity_error": self.weak_form_identity_error,
        }


def _period_partition(p, tol):
    """Adaptive panels on [0, pi], mirrored about pi/2.

    Both integrands are pi-periodic; the Theta integrand is even and the
    log-rho integrand odd about pi/2, so the mirrored partition makes the
    cancellation over a full period exact up to rounding.
    """
    def both(s):
        return np.stack([_theta_integrand(p, s), _logrho_integrand(p, s)])

    # quarter tolerance: 4k quarter-periods add up, k <= 3
    edges, _, _ = numerics.adaptive_partition(both, 0.0, 0.5 * math.pi, tol / 12)
    return np.concatenate([edges, math.pi - edges[-2::-1]])


class _PsiTable:
    """Cumulative Theta and log-rho at panel edges covering [psi_end, pi]."""

    def __init__(self, p, k, tol):
        self.p = p
        base = _period_partition(p, tol)
        shifts = [-(m * math.pi) for m in range(2 * k - 1, -1, -1)]
        edges = np.concatenate([base[:-1] + s for s in shifts] + [[math.pi]])
        # exact multiples of pi at period boundaries
        for m in range(2 * k):
            edges[m * (base.size - 1)] = -(2 * k - 1 - m) * math.pi
        self.edges = edges
        lo, hi = edges[:-1], edges[1:]
        tvals, _ = gk15(lambda s: _theta_integrand(p, s), lo, hi)
        rvals, _ = gk15(lambda s: _logrho_integrand(p, s), lo, hi)
        # integrals from each edge up to pi
        self.theta_at = np.append(np.cumsum(tvals[::-1])[::-1], 0.0)
        self.logrho_at = -np.append(np.cumsum(rvals[::-1])[::-1], 0.0)

    def theta(self, psi, j):
        """Theta(psi) for psi in panel j (vectorised over psi, j)."""
        part, _ = gk15(lambda s: _theta_integrand(self.p, s), psi, self.edges[j + 1])
        return self.theta_at[j + 1] + part

    def logrho(self, psi, j):
        part, _ = gk15(lambda s: _logrho_integrand(self.p, s), psi, self.edges[j + 1])
        return self.logrho_at[j + 1] - part

    def invert(self, theta, tol=INVERT_TOL, max_iter=60):
        """psi with Theta(psi) = theta, vectorised safeguarded Newton."""
        theta = np.asarray(theta, dtype=float)
        asc = self.theta_at[::-1]
        # panel j spans theta_at[j+1] <= theta <= theta_at[j]
        idx = np.searchsorted(asc, theta, side="left")
        j = np.clip(self.edges.size - 1 - idx, 0, self.edges.size - 2)
        lo = self.edges[j].copy()
        hi = self.edges[j + 1].copy()
        t_lo = self.theta_at[j]
        t_hi = self.theta_at[j + 1]
        if np.any(theta > t_lo + tol) or np.any(theta < t_hi - tol):
            raise RuntimeError("inversion bracket failure; quadrature tolerance too loose?")
        w = np.where(t_lo > t_hi, (theta - t_hi) / np.where(t_lo > t_hi, t_lo - t_hi, 1.0), 0.0)
        psi = hi - w * (hi - lo)
        for _ in range(max_iter):
            resid = self.theta(psi, j) - theta
            done = np.abs(resid) <= tol * (1.0 + np.abs(theta))
            if np.all(done):
                return psi
            # Theta decreasing: resid > 0 means psi too small
            lo = np.where(resid > 0, psi, lo)
            hi = np.where(resid < 0, psi, hi)
            step = resid * angle_speed(self.p, psi)
            new = psi + step
            bad = ~((new > lo) & (new < hi))
            new = np.where(bad, 0.5 * (lo + hi), new)
            psi = np.where(done, psi, new)
            if np.all(((hi - lo) <= 4 * np.spacing(np.abs(hi) + np.abs(lo))) | done):
                return psi
        raise RuntimeError("psi inversion did not converge")

    def panel_of(self, psi):
        j = np.searchsorted(self.edges, psi, side="right") - 1
        return np.clip(j, 0, self.edges.size - 2)


def build_profile(params, tol=QUAD_TOL):
    """Tabulate (theta, psi, rho, v, v') on a uniform grid over [0, theta0]."""
    if not isinstance(params, ProfileParams):
        params = ProfileParams(*params)
    p, k, n = params.p, params.k, params.n_grid
    table = _PsiTable(p, k, tol)
    theta0 = float(table.theta_at[0])
    theta = np.linspace(0.0, theta0, n)
    psi = table.invert(theta)
    psi[0] = math.pi
    psi[-1] = -(2 * k - 1) * math.pi
    if np.any(np.diff(psi) >= 0):
        raise RuntimeError("psi table is not strictly decreasing")
    logrho = table.logrho(psi, table.panel_of(psi))
    logrho[0] = 0.0
    logrho[-1] = table.logrho_at[0]
    rho = np.exp(logrho)
    rays = tuple(float(table.theta_at[m * (table.edges.size - 1) // (2 * k)])
                 for m in range(2 * k - 2, 0, -2))
    return HomogeneousProfile(
        params=params,
        theta0=theta0,
        theta_grid=theta,
        psi_values=psi,
        rho_values=rho,
        v_values=rho * np.cos(psi),
        v_prime_values=rho * np.sin(psi),
        contact_rays=rays,
        tolerances={"quadrature": tol, "inversion": INVERT_TOL},
    )


def v_eval(profile, theta):
    """Angular profile; identically -1 on [theta0, 2 pi]."""
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0) or np.any(th > 2 * math.pi):
        raise ValueError("theta must lie in [0, 2*pi]")
    inside = th <= profile.theta0
    out = np.where(inside, profile._v_spline(np.minimum(th, profile.theta0)), -1.0)
    return out if out.ndim else float(out)


def vprime_eval(profile, theta):
    th = np.asarray(theta, dtype=float)
    inside = th <= profile.theta0
    out = np.where(inside, profile._vp_spline(np.minimum(th, profile.theta0)), 0.0)
    return out if out.ndim else float(out)


def polar_angle(x1, x2):
    """Angle in [0, 2 pi)."""
    th = np.arctan2(x2, x1)
    return np.where(th < 0, th + 2 * math.pi, th)


def u_eval(profile, x):
    """u(x) = |x|^2 v(theta) for points with trailing axis of length 2."""
    x = np.asarray(x, dtype=float)
    r2 = x[..., 0] ** 2 + x[..., 1] ** 2
    th = np.minimum(polar_angle(x[..., 0], x[..., 1]), 2 * math.pi)
    out = r2 * v_eval(profile, th)
    out = np.where(r2 == 0, 0.0, out)
    return out if out.ndim else float(out)


def _bump(t):
    """C-infinity bump exp(-1/(1-t^2)) on (-1, 1) and its derivative."""
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1
    tt = np.where(inside, t, 0.0)
    b = np.where(inside, np.exp(-1.0 / (1.0 - tt * tt)), 0.0)
    db = np.where(inside, b * (-2 * tt / (1.0 - tt * tt) ** 2), 0.0)
    return b, db


def _weak_form_tests(profile):
    theta0 = profile.theta0
    rays = [0.0, theta0] if theta0 < 2 * math.pi - 1e-9 else [0.0, math.pi]
    gaps = np.diff(sorted([0.0, *profile.contact_rays, theta0, 2 * math.pi]))
    gap = min(0.9, gaps[gaps > 1e-9].min())
    half_widths = [0.5 * gap, 0.25 * gap]
    annuli = [(0.25, 0.75), (0.5, 1.0), (0.1, 1.2)]
    return [(c, w, a, b) for c in rays for w in half_widths for a, b in annuli]


def _gauss(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def weak_form_integrals(profile, n_r=512, n_theta=512):
    """Pairs (int |Du|^{p-2} Du . Dzeta, int_contact 2^{p-1} p r^{p-2} zeta).

    The two agree when Delta_p u = Delta_p(-r^2) on the contact cone and
    vanishes elsewhere; the first must be non-negative for a supersolution.
    """
    p = profile.params.p
    theta0 = profile.theta0
    out = []
    for centre, hw, ra, rb in _weak_form_tests(profile):
        r, wr = _gauss(ra, rb, n_r)
        # split the angular support where u is only C^1
        lo, hi = centre - hw, centre + hw
        cuts = sorted({lo, hi, *[c for c in (theta0 - 2 * math.pi, 0.0, theta0, 2 * math.pi)
                                 if lo < c < hi]})
        th_parts, wt_parts = [], []
        m = max(n_theta // (len(cuts) - 1), 8)
        for a, b in zip(cuts[:-1], cuts[1:]):
            t, w = _gauss(a, b, m)
            th_parts.append(t)
            wt_parts.append(w)
        th = np.concatenate(th_parts)
        wt = np.concatenate(wt_parts)
        thm = np.mod(th, 2 * math.pi)
        v = v_eval(profile, thm)
        vp = vprime_eval(profile, thm)
        br, dbr = _bump(2 * (r - ra) / (rb - ra) - 1)
        dbr = dbr * 2 / (rb - ra)
        bt, dbt = _bump((th - centre) / hw)
        dbt = dbt / hw
        R = r[:, None]
        ur = 2 * R * v[None, :]
        uth_over_r = R * vp[None, :]
        grad_norm = R * np.sqrt(4 * v * v + vp * vp)[None, :]
        flux = grad_norm ** (p - 2)
        zr = dbr[:, None] * bt[None, :]
        zth_over_r = br[:, None] * dbt[None, :] / R
        integrand = flux * (ur * zr + uth_over_r * zth_over_r) * R
        lhs = wr @ integrand @ wt
        contact = (thm >= theta0) if theta0 < 2 * math.pi else np.zeros_like(thm, bool)
        rhs_int = (2 ** (p - 1) * p * R ** (p - 1)) * br[:, None] * (bt * contact)[None, :]
        rhs = wr @ rhs_int @ wt
        out.append((float(lhs), float(rhs)))
    return out


def check_profile(profile):
    p = profile.params.p
    th = profile.theta_grid
    X, Y = profile.v_values, profile.v_prime_values
    dX = numerics.fd_derivative(th, X)
    dY = numerics.fd_derivative(th, Y)
    res = np.maximum(np.abs(dX - Y), np.abs(dY - ode_rhs(p, X, Y)))[1:-1]
    bc = (abs(X[0] + 1), abs(X[-1] + 1), abs(Y[0]), abs(Y[-1]))
    pairs = weak_form_integrals(profile)
    weak = max(max(0.0, -lhs) for lhs, _ in pairs)
    ident = max(abs(lhs - rhs) / max(1.0, abs(rhs)) for lhs, rhs in pairs)
    sym = float(np.max(np.abs(X - X[::-1])))
    return ProfileCheckReport(
        ode_residual_max=float(res.max()),
        bc_defects=tuple(float(b) for b in bc),
        weak_form_defect=float(weak),
        symmetry_defect=sym,
        weak_form_identity_error=float(ident),
    )


def save_profile(profile, csv_path, json_path=None, extra=None):
    """CSV ``theta,psi,rho,v,vprime`` plus a JSON sidecar."""
    data = np.column_stack([profile.theta_grid, profile.psi_values, profile.rho_values,
                            profile.v_values, profile.v_prime_values])
    np.savetxt(csv_path, data, delimiter=",", fmt="%.17g",
               header="theta,psi,rho,v,vprime", comments="")
    if json_path is not None:
        meta = {
            "p": profile.params.p,
            "k": profile.params.k,
            "theta0": profile.theta0,
            "n_grid": profile.params.n_grid,
            "contact_rays": list(profile.contact_rays),
            "tolerances": profile.tolerances,
        }
        if extra:
            meta.update(extra)
        with open(json_path, "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")


def load_profile(csv_path, json_path):
    with open(json_path) as fh:
        meta = json.load(fh)
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    params = ProfileParams(meta["p"], meta["k"], data.shape[0])
    rays = tuple(float(t) for t in meta.get("contact_rays", ()))
    return HomogeneousProfile(
        params=params, theta0=float(meta["theta0"]), theta_grid=data[:, 0].copy(),
        psi_values=data[:, 1].copy(), rho_values=data[:, 2].copy(),
        v_values=data[:, 3].copy(), v_prime_values=data[:, 4].copy(),
        contact_rays=rays, tolerances=dict(meta.get("tolerances", {})))
