"""Backend selection for the FEM energy kernels.

The compiled extension is used when it imports; set ``POBSTACLE_PURE_PYTHON=1``
to force the numpy fallback.
"""

import importlib
import os

import numpy as np

from . import _kernels_py


def load_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("pobstacle._kernels")
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    out = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        out.insert(0, "cython")
    return out


if os.environ.get("POBSTACLE_PURE_PYTHON") == "1":
    _impl, BACKEND = _kernels_py, "python"
else:
    try:
        _impl, BACKEND = load_backend("cython"), "cython"
    except ImportError:
        _impl, BACKEND = _kernels_py, "python"


def _args(mesh, values):
    return (np.ascontiguousarray(mesh.triangles, dtype=np.int_),
            np.ascontiguousarray(mesh.basis_gradients),
            np.ascontiguousarray(mesh.areas),
            np.ascontiguousarray(values, dtype=float))


def energy(mesh, values, p, eps, backend=None):
    impl = _impl if backend is None else load_backend(backend)
    return impl.energy(*_args(mesh, values), float(p), float(eps))


def energy_grad(mesh, values, p, eps, backend=None):
    impl = _impl if backend is None else load_backend(backend)
    return impl.energy_grad(*_args(mesh, values), float(p), float(eps))


def energy_delta(mesh, values, step, p, eps, backend=None):
    impl = _impl if backend is None else load_backend(backend)
    return impl.energy_delta(*_args(mesh, values), np.ascontiguousarray(step, dtype=float),
                             float(p), float(eps))
