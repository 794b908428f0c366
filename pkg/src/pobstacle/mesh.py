"""Planar triangulations of disks and squares with P1 geometry helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class Domain:
    kind: str  # "disk" or "square"
    size: float  # radius or side length

    def __post_init__(self):
        if self.kind not in ("disk", "square"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not self.size > 0:
            raise ValueError("domain size must be positive")

    @classmethod
    def disk(cls, radius=1.0):
        return cls("disk", float(radius))

    @classmethod
    def square(cls, side=1.0):
        return cls("square", float(side))

    def as_dict(self):
        return {"kind": self.kind, "size": self.size}


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_flags: np.ndarray
    h: float

    def __post_init__(self):
        for a in (self.vertices, self.triangles, self.boundary_flags):
            a.setflags(write=False)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self):
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    @cached_property
    def areas(self):
        return np.abs(self.signed_areas)

    @cached_property
    def basis_gradients(self):
        """Gradients of the three P1 hat functions on each triangle, (M, 3, 2)."""
        P = self.vertices[self.triangles]
        two_a = 2 * self.signed_areas
        G = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            G[:, i, 0] = (P[:, j, 1] - P[:, k, 1]) / two_a
            G[:, i, 1] = (P[:, k, 0] - P[:, j, 0]) / two_a
        G.setflags(write=False)
        return G

    @cached_property
    def lumped_mass(self):
        m = np.bincount(self.triangles.ravel(), np.repeat(self.areas / 3, 3),
                        minlength=self.n_vertices)
        m.setflags(write=False)
        return m

    @cached_property
    def edges(self):
        """Unique undirected edges, shape (E, 2) with sorted endpoints."""
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def boundary_edges(self):
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    def min_angle(self):
        P = self.vertices[self.triangles]
        angs = []
        for i in range(3):
            u = P[:, (i + 1) % 3] - P[:, i]
            w = P[:, (i + 2) % 3] - P[:, i]
            c = np.sum(u * w, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
            angs.append(np.arccos(np.clip(c, -1, 1)))
        return float(np.degrees(np.min(angs)))

    @cached_property
    def _tree(self):
        return cKDTree(self.vertices[self.triangles].mean(axis=1))

    def locate(self, points, k=(4, 16, 64)):
        """Containing triangle and barycentric coordinates for each point.

        Candidates are the triangles with the nearest centroids, widening
        through the tiers in ``k`` for points not yet inside one.  Points
        outside the mesh get the best candidate with clamped coordinates
        (constant extrapolation along the boundary).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tiers = (k,) if np.isscalar(k) else tuple(k)
        tri = np.zeros(pts.shape[0], dtype=np.int64)
        bary = np.zeros((pts.shape[0], 3))
        todo = np.arange(pts.shape[0])
        for kk in tiers:
            t, b, inside = self._locate_among(pts[todo], min(kk, self.n_triangles))
            tri[todo], bary[todo] = t, b
            todo = todo[~inside]
            if todo.size == 0:
                break
        if todo.size:
            bb = np.clip(bary[todo], 0, None)
            bary[todo] = bb / bb.sum(axis=1, keepdims=True)
        return tri, bary

    def _locate_among(self, pts, k):
        _, cand = self._tree.query(pts, k=k)
        cand = cand.reshape(pts.shape[0], k)
        P = self.vertices[self.triangles[cand]]  # (n, k, 3, 2)
        a, b, c = P[..., 0, :], P[..., 1, :], P[..., 2, :]
        det = ((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
               - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))
        q = pts[:, None, :]
        l1 = ((q[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
              - (q[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])) / det
        l2 = ((b[..., 0] - a[..., 0]) * (q[..., 1] - a[..., 1])
              - (b[..., 1] - a[..., 1]) * (q[..., 0] - a[..., 0])) / det
        lam = np.stack([1 - l1 - l2, l1, l2], axis=-1)
        score = lam.min(axis=-1)
        best = np.argmax(score, axis=1)
        rows = np.arange(pts.shape[0])
        return cand[rows, best], lam[rows, best], score[rows, best] >= -1e-10

    def interpolate(self, nodal, points):
        """Evaluate the P1 function with the given nodal values at points."""
        pts = np.asarray(points, dtype=float)
        shape = pts.shape[:-1]
        tri, bary = self.locate(pts.reshape(-1, 2))
        vals = np.sum(np.asarray(nodal)[self.triangles[tri]] * bary, axis=1)
        return vals.reshape(shape)


def _from_arrays(vertices, triangles, h):
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    sa = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    triangles = np.where((sa < 0)[:, None], triangles[:, [0, 2, 1]], triangles)
    e = np.sort(triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    flags = np.zeros(vertices.shape[0], dtype=bool)
    flags[uniq[counts == 1].ravel()] = True
    return Mesh(vertices, triangles, flags, float(h))


def _disk_mesh(radius, h):
    n = math.ceil(radius / h - 1e-9)
    if 6 * n < 16:
        raise ValueError(f"h={h} too coarse: disk boundary needs >= 16 segments")
    verts = [(0.0, 0.0)]
    start = [0]
    for j in range(1, n + 1):
        start.append(len(verts))
        r = radius * j / n
        for i in range(6 * j):
            t = 2 * math.pi * i / (6 * j)
            verts.append((r * math.cos(t), r * math.sin(t)))
    tris = []
    for i in range(6):
        tris.append((0, 1 + i, 1 + (i + 1) % 6))
    for j in range(2, n + 1):
        ni, no = 6 * (j - 1), 6 * j
        si, so = start[j - 1], start[j]
        a = b = 0
        # zip the two rings together in angle order
        while a < ni or b < no:
            ta = (a + 1) / ni
            tb = (b + 1) / no
            if b < no and (a >= ni or tb <= ta):
                tris.append((si + a % ni, so + b, so + (b + 1) % no))
                b += 1
            else:
                tris.append((si + a, so + b % no, si + (a + 1) % ni))
                a += 1
    vertices = np.array(verts)
    # snap boundary ring exactly onto the circle
    ring = vertices[start[n]:]
    ring *= radius / np.linalg.norm(ring, axis=1)[:, None]
    vertices[start[n]:] = ring
    return _from_arrays(vertices, np.array(tris), radius / n)


def _square_mesh(side, h):
    n = math.ceil(side / h - 1e-9)
    if n < 1:
        raise ValueError("degenerate h")
    t = np.linspace(-side / 2, side / 2, n + 1)
    X, Y = np.meshgrid(t, t, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return _from_arrays(verts, tris, side / n)


def build_mesh(domain, h):
    if not (h > 0 and math.isfinite(h)):
        raise ValueError(f"degenerate mesh size h={h!r}")
    if h > domain.size:
        raise ValueError(f"h={h} exceeds the domain size")
    if domain.kind == "disk":
        return _disk_mesh(domain.size, h)
    return _square_mesh(domain.size, h)


def write_off(mesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} 0\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g} 0\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"# h {mesh.h:.17g}\n")


def read_off(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    h = None
    body = []
    for ln in lines:
        if ln.startswith("# h "):
            h = float(ln.split()[2])
        elif not ln.startswith("#"):
            body.append(ln)
    if body[0] != "OFF":
        raise ValueError("not an OFF file")
    nv, nt = (int(x) for x in body[1].split()[:2])
    verts = np.array([[float(x) for x in ln.split()[:2]] for ln in body[2:2 + nv]])
    tris = np.array([[int(x) for x in ln.split()[1:4]] for ln in body[2 + nv:2 + nv + nt]])
    if h is None:
        e = verts[tris[:, 1]] - verts[tris[:, 0]]
        h = float(np.max(np.linalg.norm(e, axis=1)))
    return _from_arrays(verts, tris, h)
