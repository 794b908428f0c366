import math

import numpy as np
import pytest

from pobstacle.mesh import Domain, build_mesh, read_off, write_off


def test_square_h1():
    m = build_mesh(Domain.square(2.0), 1.0)
    assert (m.n_vertices, m.n_triangles) == (9, 8)
    assert m.boundary_flags.sum() == 8 and not m.boundary_flags[4]
    assert m.areas.sum() == pytest.approx(4.0, abs=1e-14)


def test_disk_boundary_on_circle():
    m = build_mesh(Domain.disk(1.0), 1 / 16)
    r = np.linalg.norm(m.vertices[m.boundary_flags], axis=1)
    assert np.max(np.abs(r - 1)) <= 1e-14
    assert np.all(np.linalg.norm(m.vertices[~m.boundary_flags], axis=1) < 1 - 1e-3)


@pytest.mark.parametrize("domain", [Domain.disk(1.0), Domain.square(1.0), Domain.disk(2.5)])
def test_refinement_quadruples_triangles(domain):
    h = domain.size / 8
    a, b = build_mesh(domain, h), build_mesh(domain, h / 2)
    assert b.n_triangles == 4 * a.n_triangles


@pytest.mark.parametrize("domain,h", [(Domain.disk(1.0), 1 / 16), (Domain.disk(1.0), 1 / 5),
                                      (Domain.square(2.0), 0.25)])
def test_mesh_invariants(domain, h):
    m = build_mesh(domain, h)
    assert np.all(m.signed_areas > 0)
    assert m.min_angle() >= 20.0
    # conformity: each interior edge is shared by exactly two triangles, with no
    # hanging vertex sitting on another triangle's edge
    e = np.sort(m.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert set(counts) <= {1, 2}
    bnd = np.unique(m.boundary_edges.ravel())
    assert np.array_equal(np.flatnonzero(m.boundary_flags), bnd)
    # the boundary polygon is a single closed loop
    assert len(m.boundary_edges) == len(bnd)
    euler = m.n_vertices - len(m.edges) + m.n_triangles
    assert euler == 1
    area = math.pi * domain.size**2 if domain.kind == "disk" else domain.size**2
    assert m.areas.sum() <= area * (1 + 1e-12)
    assert m.areas.sum() >= area * (1 - 2 * h**2)
    assert np.allclose(m.lumped_mass.sum(), m.areas.sum())


def test_disk_boundary_has_at_least_16_segments():
    assert len(build_mesh(Domain.disk(1.0), 1 / 3).boundary_edges) >= 16
    with pytest.raises(ValueError, match="16"):
        build_mesh(Domain.disk(1.0), 0.5)


@pytest.mark.parametrize("h", [0.0, -1.0, math.inf, math.nan, 5.0])
def test_degenerate_h_rejected(h):
    with pytest.raises(ValueError):
        build_mesh(Domain.disk(1.0), h)


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain("annulus", 1.0)
    with pytest.raises(ValueError):
        Domain.disk(0.0)


def test_basis_gradients_partition_of_unity():
    m = build_mesh(Domain.disk(1.0), 1 / 8)
    assert np.max(np.abs(m.basis_gradients.sum(axis=1))) <= 1e-12
    # gradient of the nodal interpolant of a linear function is exact
    vals = 2 * m.vertices[:, 0] - 3 * m.vertices[:, 1]
    g = np.einsum("tk,tkd->td", vals[m.triangles], m.basis_gradients)
    assert np.allclose(g, [2.0, -3.0], atol=1e-12)


def test_interpolation_reproduces_linear_functions():
    m = build_mesh(Domain.disk(1.0), 1 / 8)
    vals = 1 + m.vertices[:, 0] - 0.5 * m.vertices[:, 1]
    rng = np.random.default_rng(0)
    r = 0.98 * np.sqrt(rng.uniform(size=500))
    t = rng.uniform(0, 2 * math.pi, 500)
    pts = np.column_stack([r * np.cos(t), r * np.sin(t)])
    assert np.allclose(m.interpolate(vals, pts), 1 + pts[:, 0] - 0.5 * pts[:, 1], atol=1e-12)
    assert m.interpolate(vals, pts.reshape(25, 20, 2)).shape == (25, 20)
    tri, bary = m.locate(pts)
    assert np.all(bary >= -1e-10) and np.allclose(bary.sum(axis=1), 1)


def test_off_round_trip(tmp_path):
    m = build_mesh(Domain.disk(1.0), 1 / 8)
    path = tmp_path / "m.off"
    write_off(m, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "OFF" and lines[1] == f"{m.n_vertices} {m.n_triangles} 0"
    back = read_off(path)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary_flags, m.boundary_flags)
    assert back.h == m.h


def test_mesh_arrays_read_only():
    m = build_mesh(Domain.square(1.0), 0.25)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 1.0
