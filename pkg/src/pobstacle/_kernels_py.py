"""Pure numpy versions of the P1 p-Dirichlet energy kernels.

Signatures mirror the compiled ``_kernels`` module exactly.
"""

import numpy as np


def _element_gradients(triangles, G, values):
    v = values[triangles]  # (M, 3)
    return np.einsum("mi,mij->mj", v, G)


def energy(triangles, G, areas, values, p, eps):
    g = _element_gradients(triangles, G, values)
    s = np.einsum("mj,mj->m", g, g) + eps * eps
    return float(np.sum(areas * s ** (0.5 * p)))


def energy_grad(triangles, G, areas, values, p, eps):
    """Smoothed energy and its exact gradient with respect to nodal values."""
    g = _element_gradients(triangles, G, values)
    s = np.einsum("mj,mj->m", g, g) + eps * eps
    E = float(np.sum(areas * s ** (0.5 * p)))
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(s > 0, p * areas * s ** (0.5 * p - 1), 0.0)
    local = np.einsum("mij,mj->mi", G, g) * coef[:, None]  # (M, 3)
    grad = np.bincount(triangles.ravel(), local.ravel(), minlength=values.shape[0])
    return E, grad


def energy_delta(triangles, G, areas, values, step, p, eps):
    """E(values + step) - E(values), free of cancellation."""
    g = _element_gradients(triangles, G, values)
    d = _element_gradients(triangles, G, step)
    s0 = np.einsum("mj,mj->m", g, g) + eps * eps
    ds = 2 * np.einsum("mj,mj->m", g, d) + np.einsum("mj,mj->m", d, d)
    half = 0.5 * p
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(s0 > 0, ds / s0, 0.0)
        inc = np.where(s0 > 0, s0**half * np.expm1(half * np.log1p(rel)),
                       np.maximum(ds, 0.0) ** half)
    return float(np.sum(areas * inc))
