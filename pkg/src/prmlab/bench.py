"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run via ``prmlab bench``. Reports best-of-N wall time for the chain rollout
kernel and one SGD epoch, for both backends, plus the speedup.
"""

from __future__ import annotations

import time

import numpy as np

from . import _kernels


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rollout(n: int, length: int, repeats: int) -> dict:
    rng = np.random.default_rng(0)
    rates = np.full(length, 0.15)
    fail_u = rng.random((n, length))
    obs_u = rng.random((n, length))
    stop_u = rng.random((n, length))

    def run_numpy():
        _kernels._rollout_numpy(rates, fail_u, obs_u, stop_u, 0.95, 0.5, True)

    out = {"kernel": "rollout", "shape": f"{n}x{length}", "numpy_s": _time(run_numpy, repeats)}
    if _kernels.HAVE_NUMBA:
        _kernels._rollout_numba(rates, fail_u, obs_u, stop_u, 0.95, 0.5, True)  # compile
        out["numba_s"] = _time(
            lambda: _kernels._rollout_numba(rates, fail_u, obs_u, stop_u, 0.95, 0.5, True), repeats
        )
        a = _kernels._rollout_numpy(rates, fail_u, obs_u, stop_u, 0.95, 0.5, True)
        b = _kernels._rollout_numba(rates, fail_u, obs_u, stop_u, 0.95, 0.5, True)
        out["identical"] = all(np.array_equal(x, y) for x, y in zip(a, b))
    return out


def bench_sgd(rows: int, dims: int, repeats: int) -> dict:
    rng = np.random.default_rng(1)
    X = rng.random((rows, dims))
    y = rng.random(rows)
    order = rng.permutation(rows).astype(np.int64)
    n_batches = (rows + 63) // 64

    def run(backend):
        w = np.zeros(dims)
        b = np.zeros(1)
        backend(X, y, w, b, order, 0.5, 1e-4, 64, n_batches)

    out = {
        "kernel": "sgd_epoch",
        "shape": f"{rows}x{dims}",
        "numpy_s": _time(lambda: run(_kernels._sgd_epoch_numpy), repeats),
    }
    if _kernels.HAVE_NUMBA:
        run(_kernels._sgd_epoch_numba)  # compile
        out["numba_s"] = _time(lambda: run(_kernels._sgd_epoch_numba), repeats)
    return out


def run_benchmarks(rollouts: int, chain_length: int, rows: int, dims: int, repeats: int) -> None:
    print(f"kernel backend in use: {_kernels.BACKEND}")
    for result in (bench_rollout(rollouts, chain_length, repeats), bench_sgd(rows, dims, repeats)):
        line = f"{result['kernel']:>10} ({result['shape']}): numpy {result['numpy_s'] * 1e3:8.2f} ms"
        if "numba_s" in result:
            speedup = result["numpy_s"] / result["numba_s"]
            line += f", numba {result['numba_s'] * 1e3:8.2f} ms ({speedup:.2f}x)"
            if "identical" in result:
                line += f", outputs identical: {result['identical']}"
        print(line)
