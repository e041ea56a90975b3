"""Gradient-noise height fields lifted to 3D point clouds.

The alternate generator: instead of fractal attractors, categories are
(frequency, amplitude-scale) pairs of a 2D gradient-noise field sampled on a
fixed lattice-aligned grid and lifted to (x, y, scale * field).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .ifs import DEFAULT_POINTS, normalize_cloud

DEFAULT_GRID = 100
FREQ_CHOICES = tuple(range(2, 17))  # lattice periods across the grid
SCALE_MIN = 0.2
SCALE_SPAN = 1.8

_MASK64 = (1 << 64) - 1
_M64 = np.uint64(_MASK64)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_JMUL = np.uint64(0xC2B2AE3D27D4EB4F)


@dataclass(frozen=True)
class PerlinParams:
    frequency: float
    scale: float
    seed: int
    grid_w: int = DEFAULT_GRID
    grid_h: int = DEFAULT_GRID

    def __post_init__(self):
        if self.frequency <= 0.0:
            raise ValueError(f"frequency must be positive, got {self.frequency}")
        if self.scale <= 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.grid_w < 2 or self.grid_h < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.grid_w}x{self.grid_h}")


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over uint64 arrays."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def lattice_gradients(seed: int, n_i: int, n_j: int) -> np.ndarray:
    """Deterministic unit gradients for lattice vertices, shape (n_i, n_j, 2).

    The vertex hash depends only on (seed, i, j), never on frequency or grid
    size, so fields of different frequencies share one gradient lattice.
    """
    ii, jj = np.meshgrid(
        np.arange(n_i, dtype=np.uint64), np.arange(n_j, dtype=np.uint64), indexing="ij"
    )
    base = np.uint64(seed & _MASK64)
    with np.errstate(over="ignore"):
        h = _mix64((ii * _GOLDEN + base) & _M64)
        h = _mix64(h ^ ((jj * _JMUL + _GOLDEN) & _M64))
    angle = (h >> np.uint64(11)).astype(np.float64) * (2.0 * math.pi / float(1 << 53))
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def noise_at(seed: int, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Evaluate the gradient-noise field at lattice-space coordinates.

    Bilinear (linear, not smoothstep) interpolation of corner dot products;
    exact zeros at integer lattice vertices.
    """
    us = np.ascontiguousarray(us, dtype=np.float64)
    vs = np.ascontiguousarray(vs, dtype=np.float64)
    if us.shape != vs.shape:
        raise ValueError(f"coordinate shapes differ: {us.shape} vs {vs.shape}")
    if us.size and (us.min() < 0.0 or vs.min() < 0.0):
        raise ValueError("lattice-space coordinates must be non-negative")
    n_i = int(math.floor(float(us.max()))) + 2 if us.size else 2
    n_j = int(math.floor(float(vs.max()))) + 2 if vs.size else 2
    grads = lattice_gradients(seed, n_i, n_j)
    out = np.zeros(us.size, dtype=np.float64)
    kernels.perlin_eval(grads, us.ravel(), vs.ravel(), out)
    return out.reshape(us.shape)


def perlin_field(params: PerlinParams) -> np.ndarray:
    """Noise field on the (grid_w, grid_h) grid, indexed [x][y].

    Grid position x maps to lattice coordinate x * frequency / (grid_w - 1),
    so the field spans exactly ``frequency`` lattice periods per axis.
    """
    us = (np.arange(params.grid_w, dtype=np.float64) * params.frequency) / (params.grid_w - 1.0)
    vs = (np.arange(params.grid_h, dtype=np.float64) * params.frequency) / (params.grid_h - 1.0)
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    return noise_at(params.seed, uu, vv)


def lift_points(
    field: np.ndarray,
    params: PerlinParams,
    n_points: int = DEFAULT_POINTS,
    resample_seed: int | None = None,
) -> np.ndarray:
    """Lift a height field to 3D and resample to exactly n_points, unscaled.

    Grid (x, y) maps to [-1, 1]^2; height is scale * field, so this is the
    generator-native scale the category filter sees. Resampling is without
    replacement when the grid has at least n_points cells, with replacement
    otherwise. Defaults to the field's own seed for resampling.
    """
    if field.shape != (params.grid_w, params.grid_h):
        raise ValueError(f"field shape {field.shape} does not match params grid")
    xs = np.linspace(-1.0, 1.0, params.grid_w)
    ys = np.linspace(-1.0, 1.0, params.grid_h)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([xx, yy, params.scale * field], axis=-1).reshape(-1, 3)
    seed = params.seed if resample_seed is None else resample_seed
    rng = np.random.default_rng(seed & _MASK64)
    if pts.shape[0] >= n_points:
        keep = np.sort(rng.choice(pts.shape[0], size=n_points, replace=False))
    else:
        keep = np.sort(rng.choice(pts.shape[0], size=n_points, replace=True))
    return pts[keep]


def lift_to_cloud(
    field: np.ndarray,
    params: PerlinParams,
    n_points: int = DEFAULT_POINTS,
    resample_seed: int | None = None,
) -> np.ndarray:
    """As lift_points, then normalized (zero centroid, max |coordinate| = 1)."""
    return normalize_cloud(lift_points(field, params, n_points, resample_seed))


def vdc2(n: int) -> float:
    """Van der Corput radical inverse in base 2; a progressively refining [0,1) grid."""
    x = 0.0
    f = 0.5
    while n:
        x += f * (n & 1)
        n >>= 1
        f *= 0.5
    return x


def candidate_params(candidate: int, seed: int, grid: int = DEFAULT_GRID) -> PerlinParams:
    """Map a candidate index to a (frequency, scale) category.

    Frequency cycles through the 15 lattice-period choices; scale walks the
    base-2 radical-inverse sequence over [0.2, 2.0), so successive candidates
    refine the scale grid instead of clustering.
    """
    if candidate < 0:
        raise ValueError(f"candidate must be non-negative, got {candidate}")
    freq = float(FREQ_CHOICES[candidate % len(FREQ_CHOICES)])
    scale = SCALE_MIN + SCALE_SPAN * vdc2(candidate // len(FREQ_CHOICES))
    return PerlinParams(frequency=freq, scale=scale, seed=seed, grid_w=grid, grid_h=grid)
