"""Benchmark the hot kernels: pure NumPy vs Numba JIT.

Run with ``python3 benchmarks/bench_kernels.py``. Both implementations are
imported directly so the DESKGRASP_BACKEND flag does not matter here.
"""

from __future__ import annotations

import time

import numpy as np

from deskgrasp.kernels import numba_impl, numpy_impl
from deskgrasp.robots import xhand12


def benchmark(name: str, numpy_fn, numba_fn, iterations: int = 200):
    """Time both implementations and print per-call ms plus speedup."""
    numpy_fn()
    numba_fn()  # warmup compiles the jitted version

    start = time.perf_counter()
    for _ in range(iterations):
        numpy_fn()
    numpy_time = (time.perf_counter() - start) / iterations

    start = time.perf_counter()
    for _ in range(iterations):
        numba_fn()
    numba_time = (time.perf_counter() - start) / iterations

    print(f"{name}:")
    print(f"  NumPy:  {numpy_time * 1000:.3f} ms")
    print(f"  Numba:  {numba_time * 1000:.3f} ms")
    print(f"  Speedup: {numpy_time / numba_time:.2f}x")
    return numpy_time / numba_time


def main():
    rng = np.random.default_rng(0)
    model = xhand12()
    c = model.compiled()
    lo, hi = model.joint_limits()
    qs = rng.uniform(lo, hi, size=(64, model.n_dof))
    fi = c["frame_ids"]["ee"]
    nj = len(model.joints)

    results = []

    def fk_batch(impl):
        def run():
            for q in qs:
                jp, jq = impl.fk_chain(c["parent"], c["org_pos"],
                                       c["org_quat"], c["axis"], q)
                fp, fq = impl.frame_world(jp, jq, c["fparent"], c["fpos"],
                                          c["fquat"])
                impl.jacobian_chain(jp, jq, c["axis"], c["ancestor"][fi],
                                    fp[fi - nj])
        return run

    results.append(benchmark("FK + Jacobian (64 configs)",
                             fk_batch(numpy_impl), fk_batch(numba_impl)))

    nobj = 8
    otypes = rng.integers(0, 3, size=nobj).astype(np.int64)
    oparams = rng.uniform(0.02, 0.08, size=(nobj, 3))
    opos = rng.uniform(-0.2, 0.2, size=(nobj, 3))
    opos[:, 2] -= 0.5
    oquat = np.tile(np.array([1.0, 0, 0, 0]), (nobj, 1))
    tips = rng.uniform(-0.25, 0.25, size=(5, 3))

    def contacts(impl):
        def run():
            for _ in range(64):
                impl.tip_contacts(tips, 0.01, otypes, oparams, opos, oquat)
        return run

    results.append(benchmark("Fingertip contacts (64 queries)",
                             contacts(numpy_impl), contacts(numba_impl)))

    cam_rot = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]]).T

    def raycast(impl):
        def run():
            impl.raycast_depth(np.zeros(3), cam_rot, 24.0, 32, 32,
                               otypes, oparams, opos, oquat, 2.0)
        return run

    results.append(benchmark("Depth raycast 32x32",
                             raycast(numpy_impl), raycast(numba_impl),
                             iterations=20))

    def patches(impl):
        def run():
            for _ in range(64):
                impl.tactile_patch(2.0, 0.3, -0.2, 7.5, 8.5, 1.5, 16, 16)
        return run

    results.append(benchmark("Tactile patches (64 taxel grids)",
                             patches(numpy_impl), patches(numba_impl)))

    x = rng.normal(size=(8, 32, 16, 16))
    g = numpy_impl.im2col(x, 3, 2, 1)

    def conv_plumbing(impl):
        def run():
            cols = impl.im2col(x, 3, 2, 1)
            impl.col2im(cols, 32, 16, 16, 3, 2, 1)
        return run

    results.append(benchmark("im2col + col2im (8x32x16x16)",
                             conv_plumbing(numpy_impl),
                             conv_plumbing(numba_impl), iterations=50))

    print("-" * 50)
    print(f"Median speedup: {np.median(results):.2f}x "
          f"(min {min(results):.2f}x, max {max(results):.2f}x)")


if __name__ == "__main__":
    main()
