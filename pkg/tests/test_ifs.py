"""System sampling, chaos game, normalization, variance filter, mixing."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vgforge import ifs


def reference_chaos(params: ifs.IfsParams, n_points: int, run_seed: int) -> np.ndarray:
    """Minimal per-step recurrence with a linear scan over cumulative probs.

    Plain scalar float arithmetic, left to right, so the comparison is exact
    (BLAS matmul may associate sums differently at the last ulp).
    """
    rng = np.random.default_rng(run_seed & ((1 << 64) - 1))
    u = rng.random(n_points - 1)
    cum = np.cumsum(params.probs)
    cum[-1] = 1.0
    m = params.matrices
    b = params.biases
    pts = np.zeros((n_points, 3))
    x, y, z = 0.0, 0.0, 0.0
    for t in range(n_points - 1):
        i = 0
        while u[t] >= cum[i]:
            i += 1
        x, y, z = (
            m[i, 0, 0] * x + m[i, 0, 1] * y + m[i, 0, 2] * z + b[i, 0],
            m[i, 1, 0] * x + m[i, 1, 1] * y + m[i, 1, 2] * z + b[i, 1],
            m[i, 2, 0] * x + m[i, 2, 1] * y + m[i, 2, 2] * z + b[i, 2],
        )
        pts[t + 1] = (x, y, z)
    return pts


class TestSampleIfs:
    def test_shapes_and_bounds(self):
        p = ifs.sample_ifs(42)
        assert p.n == 7
        assert p.matrices.shape == (7, 3, 3)
        assert p.biases.shape == (7, 3)
        assert np.all(np.isfinite(p.matrices)) and np.all(np.isfinite(p.biases))
        assert np.all(np.abs(p.matrices) <= 1.0) and np.all(np.abs(p.biases) <= 1.0)

    @given(st.integers(min_value=0, max_value=2**64 - 1))
    @settings(max_examples=50, deadline=None)
    def test_probs_match_independent_determinants(self, seed):
        p = ifs.sample_ifs(seed)
        assert abs(float(p.probs.sum()) - 1.0) <= 1e-9
        assert np.all(p.probs >= 0.0)
        dets = np.abs(np.linalg.det(p.matrices))
        expected = dets / dets.sum()
        np.testing.assert_allclose(p.probs, expected, rtol=0, atol=1e-12)

    def test_rng_stream_layout(self):
        # Each transform consumes 9 matrix entries then 3 bias entries.
        p = ifs.sample_ifs(123, n_transforms=3)
        rng = np.random.default_rng(123)
        for i in range(3):
            np.testing.assert_array_equal(p.matrices[i], rng.uniform(-1, 1, (3, 3)))
            np.testing.assert_array_equal(p.biases[i], rng.uniform(-1, 1, 3))

    def test_deterministic(self):
        a, b = ifs.sample_ifs(9), ifs.sample_ifs(9)
        np.testing.assert_array_equal(a.matrices, b.matrices)
        np.testing.assert_array_equal(a.biases, b.biases)
        np.testing.assert_array_equal(a.probs, b.probs)
        c = ifs.sample_ifs(10)
        assert not np.array_equal(a.matrices, c.matrices)

    def test_rejects_fewer_than_two_transforms(self):
        with pytest.raises(ValueError):
            ifs.sample_ifs(0, n_transforms=1)

    def test_golden_seed7(self, request):
        golden = request.path.parent / "golden" / "ifs_seed7.json"
        import json

        data = json.loads(golden.read_text())
        p = ifs.sample_ifs(7)
        flat = np.concatenate([p.matrices.ravel(), p.biases.ravel()])
        assert flat.shape == (84,)
        np.testing.assert_array_equal(flat, np.array(data["entries"]))
        np.testing.assert_allclose(p.probs, np.array(data["probs"]), atol=1e-15)


def _uniform_ifs(mats, biases):
    n = mats.shape[0]
    return ifs.IfsParams(
        np.asarray(mats, dtype=np.float64),
        np.asarray(biases, dtype=np.float64),
        np.full(n, 1.0 / n),
        seed=0,
    )


class TestChaosGame:
    def test_fixed_point_at_origin(self):
        p = _uniform_ifs(np.stack([0.5 * np.eye(3)] * 2), np.zeros((2, 3)))
        pts = ifs.chaos_game(p, 64, run_seed=5)
        np.testing.assert_array_equal(pts, np.zeros((64, 3)))

    def test_constant_map_after_first_step(self):
        p = ifs.IfsParams(np.zeros((1, 3, 3)), np.array([[1.0, 0.0, 0.0]]), np.ones(1), 0)
        pts = ifs.chaos_game(p, 5, run_seed=1)
        expected = np.array([[0, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0]], dtype=float)
        np.testing.assert_array_equal(pts, expected)

    def test_starts_at_origin_no_burn_in(self):
        pts = ifs.chaos_game(ifs.sample_ifs(3), 128, run_seed=4)
        np.testing.assert_array_equal(pts[0], np.zeros(3))

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_reference_recurrence(self, seed):
        p = ifs.sample_ifs(seed)
        got = ifs.chaos_game(p, 512, run_seed=seed + 1000)
        np.testing.assert_array_equal(got, reference_chaos(p, 512, seed + 1000))

    def test_membership_replay(self):
        # Every step must equal one of the affine maps applied to its
        # predecessor; elementwise ops keep scalar left-to-right rounding.
        p = ifs.sample_ifs(77)
        m, b = p.matrices, p.biases
        pts = ifs.chaos_game(p, 256, run_seed=8)
        for t in range(255):
            x, y, z = pts[t]
            cand = np.stack(
                [
                    m[:, 0, 0] * x + m[:, 0, 1] * y + m[:, 0, 2] * z + b[:, 0],
                    m[:, 1, 0] * x + m[:, 1, 1] * y + m[:, 1, 2] * z + b[:, 1],
                    m[:, 2, 0] * x + m[:, 2, 1] * y + m[:, 2, 2] * z + b[:, 2],
                ],
                axis=1,
            )
            assert np.any(np.all(cand == pts[t + 1], axis=1))

    def test_divergence_raises_with_iteration(self):
        p = _uniform_ifs(np.stack([2.0 * np.eye(3)] * 2), np.ones((2, 3)))
        with pytest.raises(ifs.DivergenceError) as exc:
            ifs.chaos_game(p, 8192, run_seed=0)
        assert 0 < exc.value.iteration < 8192

    def test_rejects_zero_points(self):
        with pytest.raises(ValueError):
            ifs.chaos_game(ifs.sample_ifs(1), 0, 0)

    def test_deterministic_across_calls(self):
        p = ifs.sample_ifs(5)
        np.testing.assert_array_equal(
            ifs.chaos_game(p, 1024, 9), ifs.chaos_game(p, 1024, 9)
        )


class TestNormalizeCloud:
    def test_two_point_symmetry(self):
        out = ifs.normalize_cloud(np.array([[0.0, 0, 0], [2.0, 0, 0]]))
        np.testing.assert_array_equal(out, np.array([[-1.0, 0, 0], [1.0, 0, 0]]))

    def test_identical_points_become_zero(self):
        out = ifs.normalize_cloud(np.full((10, 3), 3.7))
        np.testing.assert_array_equal(out, np.zeros((10, 3)))

    @given(st.integers(min_value=0, max_value=2**32))
    @settings(max_examples=40, deadline=None)
    def test_contract_on_random_clouds(self, seed):
        pts = np.random.default_rng(seed).normal(scale=5.0, size=(50, 3))
        out = ifs.normalize_cloud(pts)
        assert abs(float(np.abs(out).max()) - 1.0) <= 1e-9
        assert float(np.linalg.norm(out.mean(axis=0))) <= 1e-9

    def test_aspect_ratio_preserved(self):
        pts = np.array([[0.0, 0, 0], [4.0, 2.0, 1.0]])
        out = ifs.normalize_cloud(pts)
        span = out.max(axis=0) - out.min(axis=0)
        np.testing.assert_allclose(span / span[0], [1.0, 0.5, 0.25], atol=1e-12)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            ifs.normalize_cloud(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            ifs.normalize_cloud(np.zeros((4, 2)))


class TestVarianceFilter:
    def test_all_origin_rejected(self):
        assert ifs.variance_filter(np.zeros((100, 3))) is False

    def test_cube_corners_accepted(self):
        corners = np.array(
            [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1) for _ in range(4)],
            dtype=float,
        )
        np.testing.assert_allclose(corners.var(axis=0), [1.0, 1.0, 1.0])
        assert ifs.variance_filter(corners, 0.05) is True

    def test_planar_cloud_rejected(self):
        rng = np.random.default_rng(0)
        flat = np.column_stack([rng.uniform(-1, 1, 500), rng.uniform(-1, 1, 500), np.zeros(500)])
        assert ifs.variance_filter(flat) is False

    @given(
        st.integers(min_value=0, max_value=2**32),
        st.floats(min_value=0.001, max_value=0.2),
        st.floats(min_value=0.001, max_value=0.2),
    )
    @settings(max_examples=40, deadline=None)
    def test_threshold_monotonicity(self, seed, t1, t2):
        lo, hi = sorted((t1, t2))
        pts = np.random.default_rng(seed).uniform(-1, 1, (200, 3))
        if ifs.variance_filter(pts, hi):
            assert ifs.variance_filter(pts, lo)


class TestFractalNoiseMix:
    def test_production_scale_sizes(self):
        assert math.ceil(0.2 * 8192) == 1639
        rng = np.random.default_rng(0)
        base = rng.uniform(-1, 1, (8192, 3))
        donor = rng.uniform(-1, 1, (8192, 3))
        out = ifs.fractal_noise_mix(base, donor, 0.2, mix_seed=1)
        assert out.shape == (8192, 3)

    def test_donor_boundary_proves_candidate_count(self):
        # 1639 donor points suffice for ratio 0.2 at T=8192; 1638 do not.
        base = np.random.default_rng(1).uniform(-1, 1, (8192, 3))
        ifs.fractal_noise_mix(base, base[:1639], 0.2, 0)
        with pytest.raises(ValueError):
            ifs.fractal_noise_mix(base, base[:1638], 0.2, 0)

    def test_self_mix_stays_subset(self):
        base = np.random.default_rng(2).uniform(-1, 1, (512, 3))
        out = ifs.fractal_noise_mix(base, base, 0.2, 3)
        base_rows = {tuple(r) for r in base}
        assert all(tuple(r) in base_rows for r in out)

    def test_minimal_ratio_changes_at_most_one_point(self):
        base = np.random.default_rng(3).uniform(-1, 1, (512, 3))
        donor = np.random.default_rng(4).uniform(-1, 1, (512, 3)) + 10.0
        out = ifs.fractal_noise_mix(base, donor, 1.0 / 512, 5)
        from_donor = int((out > 5.0).any(axis=1).sum())
        assert from_donor <= 1

    def test_base_majority_guarantee(self):
        # At least T - ceil(ratio T) output points come from base.
        base = np.random.default_rng(5).uniform(-1, 1, (512, 3))
        donor = np.random.default_rng(6).uniform(-1, 1, (512, 3)) + 10.0
        k = math.ceil(0.2 * 512)
        out = ifs.fractal_noise_mix(base, donor, 0.2, 7)
        from_base = int((out < 5.0).all(axis=1).sum())
        assert from_base >= 512 - k

    def test_deterministic_and_seed_sensitive(self):
        base = np.random.default_rng(8).uniform(-1, 1, (256, 3))
        donor = np.random.default_rng(9).uniform(-1, 1, (256, 3))
        a = ifs.fractal_noise_mix(base, donor, 0.2, 11)
        b = ifs.fractal_noise_mix(base, donor, 0.2, 11)
        c = ifs.fractal_noise_mix(base, donor, 0.2, 12)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_ratio_bounds(self):
        base = np.zeros((16, 3))
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                ifs.fractal_noise_mix(base, base, bad, 0)
