import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from conftest import cached_profile
from pobstacle import fem
from pobstacle.free_boundary import angle_at_origin
from pobstacle.mesh import Domain, build_mesh
from pobstacle.obstacle import Obstacle
from pobstacle.profile import u_eval


def spec_for(p, a=0.0, shift=0.0, domain=Domain.disk(1.0)):
    prof = cached_profile(p)
    return fem.ProblemSpec(p, Obstacle.quadratic(a, 1.0),
                           lambda X: u_eval(prof, X) + shift, domain)


def cotangent_stiffness(mesh):
    """P1 Laplace stiffness from the cotangent formula, K_ij = -(cot a + cot b)/2."""
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    V = mesh.vertices
    for tri in mesh.triangles:
        for k in range(3):
            i, j, o = tri[(k + 1) % 3], tri[(k + 2) % 3], tri[k]
            u, w = V[i] - V[o], V[j] - V[o]
            cot = (u @ w) / abs(u[0] * w[1] - u[1] * w[0])
            rows += [i, j, i, j]
            cols += [j, i, i, j]
            vals += [-cot / 2, -cot / 2, cot / 2, cot / 2]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def p2_reduced_system(spec, mesh):
    K = cotangent_stiffness(mesh)
    b = mesh.boundary_flags
    i = ~b
    g = spec.boundary_data(mesh.vertices[b])
    Kii = K[i][:, i].tocsr()
    rhs = -K[i][:, b] @ g
    phi = spec.obstacle.value(mesh.vertices[i])
    return Kii, rhs, phi, i, g


def active_set_solve(Kii, rhs, phi, c=1.0, max_iter=200):
    """Primal-dual active set method for Kii u = rhs + lam, u >= phi, lam >= 0."""
    n = len(rhs)
    u = np.maximum(spla.spsolve(Kii.tocsc(), rhs), phi)
    lam = np.zeros(n)
    prev = None
    for _ in range(max_iter):
        A = lam + c * (phi - u) > 0
        if prev is not None and np.array_equal(A, prev):
            return u
        prev = A
        I = ~A
        u = phi.copy()
        if np.any(I):
            rhs_I = rhs[I] - Kii[I][:, A] @ phi[A]
            u[I] = spla.spsolve(Kii[I][:, I].tocsc(), rhs_I)
        lam = Kii @ u - rhs
        lam[I] = 0.0
    raise AssertionError("active set iteration did not settle")


def projected_sor(Kii, rhs, phi, omega=1.8, tol=1e-13, max_sweeps=20000):
    u = np.maximum(np.zeros_like(phi), phi)
    indptr, indices, data = Kii.indptr, Kii.indices, Kii.data
    diag = Kii.diagonal()
    for _ in range(max_sweeps):
        change = 0.0
        for r in range(len(u)):
            s = rhs[r]
            for t in range(indptr[r], indptr[r + 1]):
                c = indices[t]
                if c != r:
                    s -= data[t] * u[c]
            new = max(phi[r], u[r] + omega * (s / diag[r] - u[r]))
            change = max(change, abs(new - u[r]))
            u[r] = new
        if change < tol:
            return u
    raise AssertionError("PSOR did not converge")


# --- energy and gradient ----------------------------------------------------

@pytest.fixture(scope="module")
def unit_square():
    return build_mesh(Domain.square(1.0), 1 / 8)


def test_energy_examples(unit_square):
    m = unit_square
    for p in (1.5, 2.0, 3.0):
        spec = fem.ProblemSpec(p, Obstacle.quadratic(-5.0), lambda X: 0 * X[:, 0],
                               Domain.square(1.0))
        assert fem.energy(spec, m, np.full(m.n_vertices, 2.5), 0.0) == 0.0
        assert fem.energy(spec, m, np.full(m.n_vertices, 2.5), 0.1) == pytest.approx(0.1**p)
        assert fem.energy(spec, m, m.vertices[:, 0].copy(), 0.0) == pytest.approx(1.0, abs=1e-13)


def test_gradient_of_constant_is_zero(unit_square):
    spec = fem.ProblemSpec(3.0, Obstacle.quadratic(), lambda X: 0 * X[:, 0])
    g = fem.energy_gradient(spec, unit_square, np.full(unit_square.n_vertices, 1.7), 1e-3)
    assert np.max(np.abs(g)) <= 1e-15


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_gradient_matches_central_differences(p):
    m = build_mesh(Domain.disk(1.0), 1 / 8)
    spec = fem.ProblemSpec(p, Obstacle.quadratic(), lambda X: 0 * X[:, 0])
    rng = np.random.default_rng(int(10 * p))
    for _ in range(5):
        v = rng.normal(size=m.n_vertices)
        g = fem.energy_gradient(spec, m, v, 1e-3)
        idx = rng.choice(m.n_vertices, 40, replace=False)
        step = 1e-6
        fd = np.empty(len(idx))
        for n, i in enumerate(idx):
            e = np.zeros(m.n_vertices)
            e[i] = step
            fd[n] = (fem.energy(spec, m, v + e, 1e-3) - fem.energy(spec, m, v - e, 1e-3)) / (2 * step)
        assert np.max(np.abs(fd - g[idx])) <= 1e-6 * np.max(np.abs(g[idx]))


def test_p2_gradient_is_stiffness_action():
    m = build_mesh(Domain.disk(1.0), 1 / 16)
    spec = fem.ProblemSpec(2.0, Obstacle.quadratic(), lambda X: 0 * X[:, 0])
    v = np.random.default_rng(1).normal(size=m.n_vertices)
    K = cotangent_stiffness(m)
    g = fem.energy_gradient(spec, m, v, 0.0)
    assert np.max(np.abs(g - 2 * (K @ v))) <= 1e-12 * max(1.0, np.max(np.abs(g)))
    assert abs(fem.energy(spec, m, v, 0.0) - v @ (K @ v)) <= 1e-12 * fem.energy(spec, m, v)


# --- solver examples --------------------------------------------------------

def test_inactive_obstacle_gives_zero():
    spec = fem.ProblemSpec(2.0, Obstacle.quadratic(-1.0, 1.0), lambda X: 0 * X[:, 0])
    sol = fem.solve(spec, fem.SolverConfig(), h=1 / 16)
    assert sol.converged
    assert np.max(np.abs(sol.nodal_values)) <= 1e-12
    assert fem.energy(spec, sol.mesh, sol.nodal_values) <= 1e-20
    assert fem.complementarity_residual(spec, sol) <= 1e-6


def test_p2_half_disk_angle(discrete):
    _, sol = discrete(2.0, 1 / 64)
    est = angle_at_origin(sol, Obstacle.quadratic())
    assert abs(est.theta_hat - math.pi) <= 0.1


def test_p3_angle(discrete):
    _, sol = discrete(3.0, 1 / 64)
    est = angle_at_origin(sol, Obstacle.quadratic())
    assert abs(est.theta_hat - 2.6555865787111507757) <= 0.18


def test_p2_complementarity_at_h32(discrete):
    spec, sol = discrete(2.0, 1 / 32)
    assert sol.converged
    assert fem.complementarity_residual(spec, sol) <= 10 * 1e-6


def test_p2_agrees_with_active_set_oracle():
    spec = spec_for(2.0)
    m = build_mesh(spec.domain, 1 / 16)
    Kii, rhs, phi, i, _ = p2_reduced_system(spec, m)
    u_ref = active_set_solve(Kii, rhs, phi)
    sol = fem.solve(spec, fem.SolverConfig(tol=1e-9), mesh=m)
    assert np.max(np.abs(sol.nodal_values[i] - u_ref)) <= 1e-8
    # the oracle satisfies the discrete KKT system exactly
    r = (Kii @ u_ref - rhs) / m.lumped_mass[i]
    assert np.max(np.abs(np.minimum(r, u_ref - phi))) <= 1e-10
    assert fem.complementarity_residual(spec, sol) <= 10 * 1e-9


def test_p2_agrees_with_projected_sor():
    spec = spec_for(2.0)
    m = build_mesh(spec.domain, 1 / 16)
    Kii, rhs, phi, i, _ = p2_reduced_system(spec, m)
    u_sor = projected_sor(Kii, rhs, phi)
    sol = fem.solve(spec, fem.SolverConfig(), mesh=m)
    assert np.max(np.abs(sol.nodal_values[i] - u_sor)) <= 1e-6


def test_residual_detects_infeasible_node(discrete):
    spec, sol = discrete(2.0, 1 / 32)
    u = np.array(sol.nodal_values)
    k = int(np.flatnonzero(~sol.mesh.boundary_flags)[100])
    u[k] = sol.obstacle_values[k] - 0.5
    bad = fem.DiscreteSolution(sol.mesh, u, sol.p, sol.final_epsilon, np.array(sol.obstacle_values),
                               False, 0, math.nan, math.nan)
    assert fem.complementarity_residual(spec, bad) > 0.1


def test_max_iters_flags_nonconvergence():
    sol = fem.solve(spec_for(3.0), fem.SolverConfig(max_iters=5), h=1 / 16)
    assert not sol.converged and sol.iterations <= 5
    assert sol.stats["converged"] is False


def test_incompatible_boundary_data_rejected():
    spec = fem.ProblemSpec(2.0, Obstacle.quadratic(), lambda X: -2.0 + 0 * X[:, 0])
    with pytest.raises(fem.IncompatibleDataError):
        fem.solve(spec, h=1 / 8)


def test_config_validation():
    with pytest.raises(ValueError):
        fem.SolverConfig(epsilon_schedule=(1e-2, 1e-2))
    with pytest.raises(ValueError):
        fem.SolverConfig(epsilon_schedule=(1e-3, 1e-2))
    with pytest.raises(ValueError):
        fem.SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        fem.SolverConfig(step_rule="armijo")
    with pytest.raises(ValueError):
        fem.ProblemSpec(1.0, Obstacle.quadratic(), None)
    assert fem.SolverConfig().epsilon_schedule[-1] <= 1e-8


def test_save_load_round_trip(tmp_path, discrete):
    _, sol = discrete(2.0, 1 / 32)
    csv, js = tmp_path / "s.csv", tmp_path / "s.json"
    fem.save_solution(sol, csv, js)
    assert csv.read_text().splitlines()[0] == "x1,x2,u,phi,contact_flag"
    back = fem.load_solution(csv, sol.mesh, js)
    assert np.array_equal(back.nodal_values, sol.nodal_values)
    assert np.array_equal(back.obstacle_values, sol.obstacle_values)
    assert back.stats["iterations"] == sol.stats["iterations"]
    with pytest.raises(ValueError):
        fem.load_solution(csv, build_mesh(Domain.disk(1.0), 1 / 16))


# --- invariants -------------------------------------------------------------

@pytest.mark.parametrize("p,h", [(2.0, 1 / 32), (3.0, 1 / 32), (1.5, 1 / 16), (3.0, 1 / 64)])
def test_solution_invariants(p, h, discrete):
    spec, sol = discrete(p, h)
    assert sol.converged
    phi = spec.obstacle.value(sol.mesh.vertices)
    assert np.all(sol.nodal_values >= phi - 1e-12)
    b = sol.mesh.boundary_flags
    assert np.array_equal(sol.nodal_values[b], spec.boundary_data(sol.mesh.vertices[b]))
    assert np.all(np.diff(sol.energy_history) <= 0)
    assert sol.final_epsilon <= 1e-8
    with pytest.raises(ValueError):
        sol.nodal_values[0] = 1.0


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_raising_obstacle_never_lowers_solution(p):
    low = spec_for(p, a=-0.2)
    high = spec_for(p, a=-0.1)
    cfg = fem.SolverConfig(tol=1e-10)
    m = build_mesh(low.domain, 1 / 16)
    u_low = fem.solve(low, cfg, mesh=m).nodal_values
    u_high = fem.solve(high, cfg, mesh=m).nodal_values
    assert np.all(u_high >= u_low - 1e-8)


def test_p2_error_decreases_under_refinement(discrete):
    prof = cached_profile(2.0)
    errs = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        _, sol = discrete(2.0, h)
        errs.append(np.max(np.abs(sol.nodal_values - u_eval(prof, sol.mesh.vertices))))
    assert errs[0] > errs[1] > errs[2]
