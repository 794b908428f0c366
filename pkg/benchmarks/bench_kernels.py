"""Time the compiled and numpy energy kernels on disk meshes.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from pobstacle import kernels
from pobstacle.mesh import Domain, build_mesh


def bench(mesh, backend, p, eps, repeat):
    rng = np.random.default_rng(0)
    v = rng.normal(size=mesh.n_vertices)
    step = 1e-3 * rng.normal(size=mesh.n_vertices)
    calls = {
        "energy": lambda: kernels.energy(mesh, v, p, eps, backend),
        "energy_grad": lambda: kernels.energy_grad(mesh, v, p, eps, backend),
        "energy_delta": lambda: kernels.energy_delta(mesh, v, step, p, eps, backend),
    }
    out = {}
    for name, fn in calls.items():
        fn()  # warm caches
        out[name] = min(timeit.repeat(fn, number=10, repeat=repeat)) / 10
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--p", type=float, default=3.0)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {backends}  (default {kernels.BACKEND})")
    print(f"{'h':>6} {'triangles':>9} {'kernel':>13} " + " ".join(f"{b:>11}" for b in backends)
          + ("   speedup" if len(backends) == 2 else ""))
    for n in (32, 64, 128):
        mesh = build_mesh(Domain.disk(1.0), 1 / n)
        res = {b: bench(mesh, b, args.p, 1e-6, args.repeat) for b in backends}
        for name in ("energy", "energy_grad", "energy_delta"):
            times = [res[b][name] for b in backends]
            line = f"{'1/' + str(n):>6} {mesh.n_triangles:>9} {name:>13} " + " ".join(
                f"{t * 1e3:>9.3f}ms" for t in times)
            if len(times) == 2:
                line += f"   {times[1] / times[0]:7.2f}x"
            print(line)


if __name__ == "__main__":
    main()
