"""Shared fixtures: small builds reused across test modules."""

import pytest

from vgforge import builder


@pytest.fixture(scope="session")
def mini_cfg():
    return builder.BuildConfig(categories=3, instances=2, global_seed=11)


@pytest.fixture(scope="session")
def mini_root(tmp_path_factory, mini_cfg):
    root = tmp_path_factory.mktemp("mini_fractal")
    builder.build_dataset(mini_cfg, root)
    return root


@pytest.fixture(scope="session")
def mini_manifest(mini_root):
    return builder.load_manifest(mini_root / "manifest.json")


@pytest.fixture(scope="session")
def perlin_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini_perlin")
    cfg = builder.BuildConfig(categories=2, instances=2, global_seed=11, generator="perlin")
    builder.build_dataset(cfg, root)
    return root
