"""Obstacle problem min{-Delta_p u, u - phi} = 0 as constrained minimisation
of the smoothed P1 p-Dirichlet energy, by projected spectral gradient."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .mesh import Domain, Mesh, build_mesh

log = logging.getLogger(__name__)

DEFAULT_EPS_SCHEDULE = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
MAX_HALVINGS = 60
FEAS_TOL = 1e-12


class IncompatibleDataError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    p: float
    obstacle: object
    boundary_data: object
    domain: Domain = Domain("disk", 1.0)

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iters: int = 100000
    epsilon_schedule: tuple = DEFAULT_EPS_SCHEDULE
    step_rule: str = "barzilai-borwein-with-backtracking"

    def __post_init__(self):
        sched = tuple(float(e) for e in self.epsilon_schedule)
        object.__setattr__(self, "epsilon_schedule", sched)
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not sched or any(e <= 0 for e in sched):
            raise ValueError("epsilon_schedule must be non-empty and positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("epsilon_schedule must be strictly decreasing")
        if self.step_rule != "barzilai-borwein-with-backtracking":
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass(frozen=True, eq=False)
class DiscreteSolution:
    mesh: Mesh
    nodal_values: np.ndarray
    p: float
    final_epsilon: float
    obstacle_values: np.ndarray
    converged: bool
    iterations: int
    final_energy: float
    projected_gradient_norm: float
    energy_history: np.ndarray = field(repr=False, default=None)
    stage_stats: tuple = ()

    def __post_init__(self):
        self.nodal_values.setflags(write=False)
        self.obstacle_values.setflags(write=False)

    @property
    def stats(self):
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_energy": self.final_energy,
            "projected_gradient_norm": self.projected_gradient_norm,
            "final_epsilon": self.final_epsilon,
            "p": self.p,
            "h": self.mesh.h,
            "n_vertices": self.mesh.n_vertices,
            "n_triangles": self.mesh.n_triangles,
            "stages": list(self.stage_stats),
        }

    @property
    def gap(self):
        return self.nodal_values - self.obstacle_values

    def __call__(self, points):
        return self.mesh.interpolate(self.nodal_values, points)

    def gap_at(self, points):
        """P1 interpolant of the nodal gap u - phi."""
        return self.mesh.interpolate(self.gap, points)


def energy(spec, mesh, values, eps=0.0):
    """sum_T |T| (|grad v|^2 + eps^2)^{p/2}."""
    return kernels.energy(mesh, values, spec.p, eps)


def energy_gradient(spec, mesh, values, eps):
    return kernels.energy_grad(mesh, values, spec.p, eps)[1]


def stiffness_matrix(mesh):
    """Standard P1 Laplace stiffness matrix."""
    G = mesh.basis_gradients
    local = np.einsum("mik,mjk->mij", G, G) * mesh.areas[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)),
                         shape=(mesh.n_vertices, mesh.n_vertices))


def _harmonic_start(mesh, g_bnd):
    """Discrete harmonic extension of the boundary data (initial guess)."""
    K = stiffness_matrix(mesh).tocsr()
    b = mesh.boundary_flags
    i = ~b
    u = np.zeros(mesh.n_vertices)
    u[b] = g_bnd
    if np.any(i):
        rhs = -K[i][:, b] @ g_bnd
        u[i] = spla.spsolve(K[i][:, i].tocsc(), rhs)
    return u


def _projected_gradient(u, g, phi, interior):
    pg = np.minimum(g, u - phi)
    pg[~interior] = 0.0
    return pg


def solve(spec, config=None, h=None, mesh=None, initial=None):
    """Minimise the smoothed energy over {u >= phi, u = g on the boundary}.

    Stages run over ``config.epsilon_schedule`` with warm starts; each stops
    when max |min(M^{-1} dE, u - phi)| <= tol (1 + |E|) over interior nodes.
    The last stage uses the absolute bound ``tol`` so that the returned
    complementarity residual is controlled independently of the energy scale.
    """
    config = config or SolverConfig()
    if mesh is None:
        if h is None:
            raise ValueError("need h or mesh")
        mesh = build_mesh(spec.domain, h)
    p = spec.p
    X = mesh.vertices
    phi = np.asarray(spec.obstacle.value(X), dtype=float)
    bnd = mesh.boundary_flags
    interior = ~bnd
    g_bnd = np.asarray(spec.boundary_data(X[bnd]), dtype=float)
    if np.any(g_bnd < phi[bnd] - FEAS_TOL):
        worst = float(np.max(phi[bnd] - g_bnd))
        raise IncompatibleDataError(f"boundary data below obstacle by {worst:.3g}")

    if initial is None:
        u = _harmonic_start(mesh, g_bnd)
    else:
        u = np.array(initial, dtype=float)
        u[bnd] = g_bnd
    u[interior] = np.maximum(u[interior], phi[interior])
    mass = mesh.lumped_mass

    history = []
    stages = []
    total_iters = 0
    converged = True
    pg_norm = math.inf
    E = math.nan
    last = len(config.epsilon_schedule) - 1
    for stage, eps in enumerate(config.epsilon_schedule):
        E, grad = kernels.energy_grad(mesh, u, p, eps)
        history.append(E)
        g = np.where(interior, grad / mass, 0.0)
        pg = _projected_gradient(u, g, phi, interior)
        pg_norm = float(np.max(np.abs(pg))) if pg.size else 0.0
        alpha = 1.0 / max(1.0, float(np.max(np.abs(g))))
        stage_iters = 0
        stalled = False
        def target():
            return config.tol if stage == last else config.tol * (1 + abs(E))

        while pg_norm > target():
            if total_iters >= config.max_iters:
                break
            for _ in range(MAX_HALVINGS + 1):
                trial = u - alpha * g
                np.maximum(trial, phi, out=trial, where=interior)
                trial[bnd] = u[bnd]
                step = trial - u
                dE = kernels.energy_delta(mesh, u, step, p, eps)
                if dE < 0:
                    break
                alpha *= 0.5
            else:
                stalled = True
                break
            u = trial
            E_new, grad_new = kernels.energy_grad(mesh, u, p, eps)
            E = E + dE
            history.append(E)
            y = grad_new - grad
            sy = float(step @ y)
            ss = float(step @ (mass * step))
            alpha = ss / sy if sy > 0 else 1e3 * alpha
            grad = grad_new
            g = np.where(interior, grad / mass, 0.0)
            pg = _projected_gradient(u, g, phi, interior)
            pg_norm = float(np.max(np.abs(pg)))
            stage_iters += 1
            total_iters += 1
        E = kernels.energy(mesh, u, p, eps)
        ok = pg_norm <= target()
        stages.append({"epsilon": eps, "iterations": stage_iters, "energy": E,
                       "projected_gradient_norm": pg_norm, "converged": ok,
                       "stalled": stalled})
        log.debug("eps=%g iters=%d E=%.12g pg=%.3e", eps, stage_iters, E, pg_norm)
        if not ok:
            converged = False
        if total_iters >= config.max_iters and not ok:
            break

    return DiscreteSolution(
        mesh=mesh,
        nodal_values=u,
        p=p,
        final_epsilon=eps,
        obstacle_values=phi,
        converged=converged,
        iterations=total_iters,
        final_energy=float(E),
        projected_gradient_norm=pg_norm,
        energy_history=np.array(history),
        stage_stats=tuple(stages),
    )


def complementarity_residual(spec, solution):
    """max over interior nodes of |min(M^{-1} dE, u - phi)|."""
    mesh = solution.mesh
    u = np.asarray(solution.nodal_values, dtype=float)
    grad = kernels.energy_grad(mesh, u, spec.p, solution.final_epsilon)[1]
    interior = ~mesh.boundary_flags
    r = grad[interior] / mesh.lumped_mass[interior]
    gap = u[interior] - np.asarray(spec.obstacle.value(mesh.vertices[interior]))
    return float(np.max(np.abs(np.minimum(r, gap)))) if r.size else 0.0


def save_solution(solution, csv_path, json_path=None, tol_factor=4.0):
    """CSV ``x1,x2,u,phi,contact_flag`` plus a JSON stats block."""
    X = solution.mesh.vertices
    flags = solution.gap <= tol_factor * solution.mesh.h**2
    with open(csv_path, "w") as fh:
        fh.write("x1,x2,u,phi,contact_flag\n")
        for (x1, x2), u, ph, f in zip(X, solution.nodal_values, solution.obstacle_values, flags):
            fh.write(f"{x1:.17g},{x2:.17g},{u:.17g},{ph:.17g},{int(f)}\n")
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(solution.stats, fh, indent=2)
            fh.write("\n")


def load_solution(csv_path, mesh, json_path=None):
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != mesh.n_vertices or not np.allclose(data[:, :2], mesh.vertices,
                                                           atol=1e-12):
        raise ValueError("solution CSV does not match the mesh")
    stats = {}
    if json_path is not None:
        with open(json_path) as fh:
            stats = json.load(fh)
    return DiscreteSolution(
        mesh=mesh, nodal_values=data[:, 2].copy(), p=float(stats.get("p", math.nan)),
        final_epsilon=float(stats.get("final_epsilon", 0.0)),
        obstacle_values=data[:, 3].copy(), converged=bool(stats.get("converged", True)),
        iterations=int(stats.get("iterations", 0)),
        final_energy=float(stats.get("final_energy", math.nan)),
        projected_gradient_norm=float(stats.get("projected_gradient_norm", math.nan)),
        stage_stats=tuple(stats.get("stages", ())))
