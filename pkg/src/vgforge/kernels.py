"""Hot inner-loop kernels with a numba fast path and a pure-Python fallback.

Set VGFORGE_NO_NUMBA=1 to force the fallback. Each kernel exists once as a
plain scalar-loop function; the fast path is ``numba.njit(cache=True)`` of the
very same function, so both paths execute identical IEEE-754 operations and
give bit-identical results (no fastmath, no FMA contraction). Golden files and
dataset digests therefore do not depend on the flag. ``bench/bench_kernels.py``
compares the two paths.

Anything that vectorizes cleanly (BLAS matmuls, distance matrices, sorting)
stays in plain numpy in the calling modules; only genuinely sequential or
branchy loops live here.
"""

import math
import os

import numpy as np

_FLAG = os.environ.get("VGFORGE_NO_NUMBA", "")
if _FLAG not in ("", "0"):
    USING_NUMBA = False
else:
    try:
        from numba import njit

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USING_NUMBA = False


def _chaos_run(mats, biases, idx, out):
    """Run the affine recurrence x_{t+1} = M[i] x_t + b[i] over a drawn index stream.

    ``out`` must be (T, 3) with out[0] already meaningful as the start point
    (the caller zeroes it). Returns the index of the first non-finite point,
    or -1 if the whole run stayed finite.
    """
    T = out.shape[0]
    x = out[0, 0]
    y = out[0, 1]
    z = out[0, 2]
    for t in range(T - 1):
        i = idx[t]
        nx = mats[i, 0, 0] * x + mats[i, 0, 1] * y + mats[i, 0, 2] * z + biases[i, 0]
        ny = mats[i, 1, 0] * x + mats[i, 1, 1] * y + mats[i, 1, 2] * z + biases[i, 1]
        nz = mats[i, 2, 0] * x + mats[i, 2, 1] * y + mats[i, 2, 2] * z + biases[i, 2]
        if not (math.isfinite(nx) and math.isfinite(ny) and math.isfinite(nz)):
            return t + 1
        out[t + 1, 0] = nx
        out[t + 1, 1] = ny
        out[t + 1, 2] = nz
        x = nx
        y = ny
        z = nz
    return -1


def _project_points(pts, rot, trans, inv_at, inv_t, near, far, width, height, pix, ok):
    """Camera-transform, frustum-cull and rasterize points to pixel indices.

    rot/trans are the world-to-camera rotation rows and translation. inv_at and
    inv_t are 1/(aspect*tan(fov/2)) and 1/tan(fov/2). Writes (row, col) into
    ``pix`` and a survival flag into ``ok``. Rounding is half-away-from-zero
    (viewport coordinates are non-negative) followed by a clamp to the frame.
    """
    n = pts.shape[0]
    for k in range(n):
        px = pts[k, 0]
        py = pts[k, 1]
        pz = pts[k, 2]
        cx = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
        cy = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
        cz = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
        depth = -cz
        if depth < near or depth > far:
            ok[k] = False
            continue
        xn = (cx * inv_at) / depth
        yn = (cy * inv_t) / depth
        if xn < -1.0 or xn > 1.0 or yn < -1.0 or yn > 1.0:
            ok[k] = False
            continue
        fx = (xn + 1.0) * 0.5 * width
        fy = (1.0 - (yn + 1.0) * 0.5) * height
        ix = int(math.floor(fx + 0.5))
        iy = int(math.floor(fy + 0.5))
        if ix >= width:
            ix = width - 1
        if iy >= height:
            iy = height - 1
        pix[k, 0] = iy
        pix[k, 1] = ix
        ok[k] = True


def _perlin_eval(grads, us, vs, out):
    """Gradient-noise evaluation at lattice-space coordinates.

    Corner contributions are dot(gradient, offset); interpolation is plain
    bilinear (linear, not smoothstep), so values at integer lattice vertices
    are exactly zero.
    """
    n = us.shape[0]
    for k in range(n):
        u = us[k]
        v = vs[k]
        i0 = int(math.floor(u))
        j0 = int(math.floor(v))
        fu = u - i0
        fv = v - j0
        n00 = grads[i0, j0, 0] * fu + grads[i0, j0, 1] * fv
        n10 = grads[i0 + 1, j0, 0] * (fu - 1.0) + grads[i0 + 1, j0, 1] * fv
        n01 = grads[i0, j0 + 1, 0] * fu + grads[i0, j0 + 1, 1] * (fv - 1.0)
        n11 = grads[i0 + 1, j0 + 1, 0] * (fu - 1.0) + grads[i0 + 1, j0 + 1, 1] * (fv - 1.0)
        nx0 = n00 + fu * (n10 - n00)
        nx1 = n01 + fu * (n11 - n01)
        out[k] = nx0 + fv * (nx1 - nx0)


def _fps_select(pts, start, centers, min_d2):
    """Greedy farthest-point sampling. Ties pick the lowest index (strict >)."""
    n = pts.shape[0]
    k = centers.shape[0]
    for i in range(n):
        min_d2[i] = 1e300
    centers[0] = start
    cur = start
    for c in range(1, k):
        cx = pts[cur, 0]
        cy = pts[cur, 1]
        cz = pts[cur, 2]
        best = 0
        bestd = -1.0
        for i in range(n):
            dx = pts[i, 0] - cx
            dy = pts[i, 1] - cy
            dz = pts[i, 2] - cz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < min_d2[i]:
                min_d2[i] = d2
            if min_d2[i] > bestd:
                bestd = min_d2[i]
                best = i
        centers[c] = best
        cur = best


# Pure-Python handles, kept importable for the benchmark and equivalence tests.
chaos_run_py = _chaos_run
project_points_py = _project_points
perlin_eval_py = _perlin_eval
fps_select_py = _fps_select

if USING_NUMBA:
    chaos_run = njit(cache=True)(_chaos_run)
    project_points = njit(cache=True)(_project_points)
    perlin_eval = njit(cache=True)(_perlin_eval)
    fps_select = njit(cache=True)(_fps_select)
else:
    chaos_run = _chaos_run
    project_points = _project_points
    perlin_eval = _perlin_eval
    fps_select = _fps_select


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    mats = np.zeros((1, 3, 3))
    biases = np.zeros((1, 3))
    pts = np.zeros((2, 3))
    chaos_run(mats, biases, np.zeros(1, dtype=np.int64), pts)
    project_points(
        pts, np.eye(3), np.array([0.0, 0.0, -2.0]), 1.0, 1.0, 1.0, 10.0, 4, 4,
        np.zeros((2, 2), dtype=np.int64), np.zeros(2, dtype=np.bool_),
    )
    perlin_eval(np.zeros((2, 2, 2)), np.zeros(1), np.zeros(1), np.zeros(1))
    fps_select(np.arange(6.0).reshape(2, 3), 0, np.zeros(2, dtype=np.int64), np.zeros(2))
