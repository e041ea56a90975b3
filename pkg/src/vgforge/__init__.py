"""Deterministic paired fractal point-cloud / image dataset generation.

Every sample is a 3D point cloud and a perspective rendering of that same
cloud, labeled by the generating category, so image/geometry consistency is
known by construction. A small numpy transformer harness trains on the pairs
to check that the labels are actually learnable, and a label-shuffle mode
checks that they are learnable for the right reason.
"""

from .builder import (
    BuildConfig,
    BuildError,
    build_dataset,
    dataset_stats,
    load_manifest,
    shuffle_labels,
    verify_dataset,
)
from .ifs import (
    DivergenceError,
    IfsParams,
    chaos_game,
    fractal_noise_mix,
    normalize_cloud,
    sample_ifs,
    variance_filter,
)
from .perlin import PerlinParams, lift_to_cloud, perlin_field
from .projection import CameraPose, ProjectionConfig, project, sample_camera

__version__ = "0.1.0"

__all__ = [
    "BuildConfig",
    "BuildError",
    "CameraPose",
    "DivergenceError",
    "IfsParams",
    "PerlinParams",
    "ProjectionConfig",
    "build_dataset",
    "chaos_game",
    "dataset_stats",
    "fractal_noise_mix",
    "lift_to_cloud",
    "load_manifest",
    "normalize_cloud",
    "perlin_field",
    "project",
    "sample_camera",
    "sample_ifs",
    "shuffle_labels",
    "variance_filter",
    "verify_dataset",
]
