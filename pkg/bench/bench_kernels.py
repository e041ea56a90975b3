"""Compare the jit and pure-Python kernel paths on realistic workloads.

Both paths execute the same function body, so outputs are asserted
bit-identical before timings are reported. Run:

    python3 bench/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from vgforge import kernels


def _time(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_chaos(repeats: int):
    rng = np.random.default_rng(0)
    mats = rng.uniform(-0.9, 0.9, (7, 3, 3))
    biases = rng.uniform(-1.0, 1.0, (7, 3))
    idx = rng.integers(0, 7, 8191)
    fast = np.zeros((8192, 3))
    slow = np.zeros((8192, 3))
    kernels.chaos_run(mats, biases, idx, fast)
    kernels.chaos_run_py(mats, biases, idx, slow)
    assert np.array_equal(fast, slow), "kernel paths disagree"
    return (
        "chaos_run (T=8192, n=7)",
        _time(kernels.chaos_run, (mats, biases, idx, fast), repeats),
        _time(kernels.chaos_run_py, (mats, biases, idx, slow), repeats),
    )


def bench_project(repeats: int):
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1.0, 1.0, (8192, 3))
    rot = np.eye(3)
    trans = np.array([0.0, 0.0, -2.5])
    inv = 1.0 / np.tan(np.pi / 8.0)
    pix_f = np.zeros((8192, 2), dtype=np.int64)
    ok_f = np.zeros(8192, dtype=np.bool_)
    pix_s = np.zeros((8192, 2), dtype=np.int64)
    ok_s = np.zeros(8192, dtype=np.bool_)
    args_f = (pts, rot, trans, inv, inv, 1.0, 100.0, 224, 224, pix_f, ok_f)
    args_s = (pts, rot, trans, inv, inv, 1.0, 100.0, 224, 224, pix_s, ok_s)
    kernels.project_points(*args_f)
    kernels.project_points_py(*args_s)
    assert np.array_equal(ok_f, ok_s) and np.array_equal(pix_f[ok_f], pix_s[ok_s])
    return (
        "project_points (8192 pts)",
        _time(kernels.project_points, args_f, repeats),
        _time(kernels.project_points_py, args_s, repeats),
    )


def bench_perlin(repeats: int):
    rng = np.random.default_rng(2)
    grads = rng.normal(size=(18, 18, 2))
    grads /= np.linalg.norm(grads, axis=-1, keepdims=True)
    us = rng.uniform(0.0, 16.0, 10_000)
    vs = rng.uniform(0.0, 16.0, 10_000)
    fast = np.zeros(10_000)
    slow = np.zeros(10_000)
    kernels.perlin_eval(grads, us, vs, fast)
    kernels.perlin_eval_py(grads, us, vs, slow)
    assert np.array_equal(fast, slow)
    return (
        "perlin_eval (10k samples)",
        _time(kernels.perlin_eval, (grads, us, vs, fast), repeats),
        _time(kernels.perlin_eval_py, (grads, us, vs, slow), repeats),
    )


def bench_fps(repeats: int):
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(8192, 3))
    c_f = np.zeros(64, dtype=np.int64)
    c_s = np.zeros(64, dtype=np.int64)
    kernels.fps_select(pts, 0, c_f, np.zeros(8192))
    kernels.fps_select_py(pts, 0, c_s, np.zeros(8192))
    assert np.array_equal(c_f, c_s)
    return (
        "fps_select (8192 -> 64)",
        _time(kernels.fps_select, (pts, 0, c_f, np.zeros(8192)), repeats),
        _time(kernels.fps_select_py, (pts, 0, c_s, np.zeros(8192)), repeats),
    )


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    print(f"numba active: {kernels.USING_NUMBA}")
    if kernels.USING_NUMBA:
        kernels.warmup()
    rows = [bench(args.repeats) for bench in (bench_chaos, bench_project, bench_perlin, bench_fps)]
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel'.ljust(width)}  {'fast path':>12}  {'pure python':>12}  {'speedup':>8}")
    for name, fast, slow in rows:
        print(f"{name.ljust(width)}  {fast * 1e3:>10.3f}ms  {slow * 1e3:>10.3f}ms  {slow / fast:>7.1f}x")


if __name__ == "__main__":
    main()
