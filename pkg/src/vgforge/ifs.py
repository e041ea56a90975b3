"""3D affine iterated function systems: sampling, chaos game, filters, mixing."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_TRANSFORMS = 7
DEFAULT_POINTS = 8192
VARIANCE_THRESHOLD = 0.05
DEFAULT_MIX_RATIO = 0.2

_DET_EPS = 1e-12
_MASK64 = (1 << 64) - 1


class DivergenceError(RuntimeError):
    """Raised when the chaos game produces a non-finite point."""

    def __init__(self, iteration: int):
        super().__init__(f"chaos game diverged at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class IfsParams:
    """One system: n affine maps x -> M_i x + b_i with selection probabilities."""

    matrices: np.ndarray  # (n, 3, 3) float64
    biases: np.ndarray  # (n, 3) float64
    probs: np.ndarray  # (n,) float64, sums to 1
    seed: int

    @property
    def n(self) -> int:
        return self.matrices.shape[0]


def _det3(mats: np.ndarray) -> np.ndarray:
    """Closed-form 3x3 determinants (cofactor expansion along the first row)."""
    a, b, c = mats[:, 0, 0], mats[:, 0, 1], mats[:, 0, 2]
    d, e, f = mats[:, 1, 0], mats[:, 1, 1], mats[:, 1, 2]
    g, h, i = mats[:, 2, 0], mats[:, 2, 1], mats[:, 2, 2]
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


def sample_ifs(seed: int, n_transforms: int = DEFAULT_TRANSFORMS) -> IfsParams:
    """Draw a system with i.i.d. U(-1,1) matrix/bias entries.

    Selection probabilities are proportional to |det M_i|; if every
    determinant magnitude is below 1e-12 they fall back to uniform. Entries
    are drawn transform-by-transform (12 values each: 9 matrix then 3 bias)
    from ``numpy.random.default_rng(seed)``.
    """
    if n_transforms < 2:
        raise ValueError(f"n_transforms must be >= 2, got {n_transforms}")
    rng = np.random.default_rng(seed & _MASK64)
    mats = np.empty((n_transforms, 3, 3))
    biases = np.empty((n_transforms, 3))
    for i in range(n_transforms):
        mats[i] = rng.uniform(-1.0, 1.0, (3, 3))
        biases[i] = rng.uniform(-1.0, 1.0, 3)
    dets = np.abs(_det3(mats))
    if float(dets.max()) < _DET_EPS:
        probs = np.full(n_transforms, 1.0 / n_transforms)
    else:
        probs = dets / dets.sum()
    return IfsParams(mats, biases, probs, seed & _MASK64)


def chaos_game(ifs: IfsParams, n_points: int = DEFAULT_POINTS, run_seed: int = 0) -> np.ndarray:
    """Generate n_points via the chaos game starting from the origin.

    The start point is kept as the first output row; there is no burn-in.
    Transform t is chosen per step as the smallest i with u < cumsum(probs)[i]
    for u ~ U[0,1) from ``default_rng(run_seed)``. Raises DivergenceError if a
    point goes non-finite.
    """
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    rng = np.random.default_rng(run_seed & _MASK64)
    u = rng.random(n_points - 1)
    cum = np.cumsum(ifs.probs)
    cum[-1] = 1.0  # guard against fp sums just below 1
    idx = np.searchsorted(cum, u, side="right").astype(np.int64)
    pts = np.zeros((n_points, 3))
    with np.errstate(over="ignore", invalid="ignore"):
        bad = kernels.chaos_run(ifs.matrices, ifs.biases, idx, pts)
    if bad >= 0:
        raise DivergenceError(int(bad))
    return pts


def normalize_cloud(points: np.ndarray) -> np.ndarray:
    """Translate centroid to the origin, then scale so max |coordinate| is 1.

    A cloud of identical points maps to all zeros (no division by zero).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, 3) array, got shape {pts.shape}")
    centered = pts - pts.mean(axis=0)
    extent = float(np.abs(centered).max())
    if extent == 0.0:
        return np.zeros_like(centered)
    return centered / extent


def variance_filter(points: np.ndarray, threshold: float = VARIANCE_THRESHOLD) -> bool:
    """True when the population variance along every axis strictly exceeds threshold.

    A pure scale-sensitive predicate: the builder applies it to clouds at
    generator-native scale to reject planar and near-degenerate shapes.
    Enormous-but-finite coordinates may overflow the variance to inf, which
    counts as exceeding any threshold.
    """
    with np.errstate(over="ignore"):
        var = np.asarray(points, dtype=np.float64).var(axis=0)
    return bool(np.all(var > threshold))


def fractal_noise_mix(
    base: np.ndarray,
    donor: np.ndarray,
    ratio: float = DEFAULT_MIX_RATIO,
    mix_seed: int = 0,
) -> np.ndarray:
    """Blend ceil(ratio*T) donor points into a T-point base cloud, keeping T points.

    Donor points are sampled without replacement, appended, and the combined
    set is subsampled without replacement back to T. Output coordinates are a
    subset of the inputs; no re-normalization happens here.
    """
    base = np.asarray(base, dtype=np.float64)
    donor = np.asarray(donor, dtype=np.float64)
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    t = base.shape[0]
    k = math.ceil(ratio * t)
    if donor.shape[0] < k:
        raise ValueError(f"donor has {donor.shape[0]} points, need at least {k}")
    rng = np.random.default_rng(mix_seed & _MASK64)
    take = rng.choice(donor.shape[0], size=k, replace=False)
    combined = np.concatenate([base, donor[take]], axis=0)
    keep = np.sort(rng.choice(combined.shape[0], size=t, replace=False))
    return combined[keep]
