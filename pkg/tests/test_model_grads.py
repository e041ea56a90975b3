"""Analytic gradients against central finite differences on small models."""

import math

import numpy as np
import pytest

from vgforge.model.encoder import classify, classify_backward
from vgforge.model.losses import ce_from_logits, ce_loss, vgc_from_logits, vgc_loss
from vgforge.model.params import ModelConfig, init_params
from vgforge.model.train import _joint_backward, _joint_forward, _zero_grads

FD_EPS = 1e-6
REL_TOL = 1e-4


def _toy_config(rng) -> ModelConfig:
    dim = int(rng.choice([8, 16]))
    heads = int(rng.choice([h for h in (1, 2, 4) if dim % h == 0]))
    return ModelConfig(
        num_classes=int(rng.integers(2, 6)),
        dim=dim,
        depth=int(rng.integers(1, 3)),
        heads=heads,
        mlp_ratio=int(rng.integers(1, 3)),
        image_size=8,
        patch_size=4,
        channels=1,
        point_patches=int(rng.integers(2, 5)),
        point_patch_size=int(rng.integers(3, 8)),
        point_hidden=8,
    )


def _toy_batch(rng, cfg: ModelConfig, batch: int):
    patches = rng.uniform(-1.0, 1.0, (batch, cfg.n_image_tokens, cfg.patch_dim))
    groups = rng.normal(0.0, 0.4, (batch, cfg.point_patches, cfg.point_patch_size, 3))
    centers = rng.normal(0.0, 0.6, (batch, cfg.point_patches, 3))
    labels = rng.integers(0, cfg.num_classes, batch)
    return patches, groups, centers, labels


def _loss_and_grads(patches, groups, centers, labels, params, cfg, head="head"):
    enc, caches = _joint_forward(patches, groups, centers, params, cfg)
    logits = classify(enc, params, head=head)
    if head == "head":
        loss, dlogits = ce_from_logits(logits, labels)
    else:
        loss, dlogits = vgc_from_logits(logits, labels)
    grads = _zero_grads(params)
    dout = classify_backward(dlogits, enc, params, grads, head=head)
    _joint_backward(dout, caches, params, cfg, grads)
    return loss, grads


def _spot_check(instance_seed: int, head: str = "head", probes: int = 6) -> float:
    """Worst relative FD error over randomly probed coordinates of one instance."""
    rng = np.random.default_rng(instance_seed)
    cfg = _toy_config(rng)
    params = init_params(cfg, seed=instance_seed)
    patches, groups, centers, labels = _toy_batch(rng, cfg, batch=2)
    if head == "vgc":
        labels = rng.integers(0, 2, 2)
    loss, grads = _loss_and_grads(patches, groups, centers, labels, params, cfg, head)
    assert np.isfinite(loss)

    worst = 0.0
    names = sorted(params)
    for _ in range(probes):
        name = names[int(rng.integers(0, len(names)))]
        flat = params[name].reshape(-1)
        i = int(rng.integers(0, flat.size))
        orig = flat[i]
        flat[i] = orig + FD_EPS
        lp, _ = _loss_and_grads(patches, groups, centers, labels, params, cfg, head)
        flat[i] = orig - FD_EPS
        lm, _ = _loss_and_grads(patches, groups, centers, labels, params, cfg, head)
        flat[i] = orig
        fd = (lp - lm) / (2.0 * FD_EPS)
        an = float(grads[name].reshape(-1)[i])
        denom = max(abs(fd), abs(an), 1e-6)
        worst = max(worst, abs(fd - an) / denom)
    return worst


class TestFiniteDifferences:
    @pytest.mark.parametrize("instance_seed", range(46))
    def test_classification_path(self, instance_seed):
        assert _spot_check(instance_seed) < REL_TOL

    @pytest.mark.parametrize("instance_seed", range(100, 106))
    def test_pair_consistency_path(self, instance_seed):
        assert _spot_check(instance_seed, head="vgc") < REL_TOL


class TestCeLoss:
    def test_uniform_equals_log_classes(self):
        for c in (2, 7, 10):
            preds = np.full((4, c), 1.0 / c)
            assert abs(ce_loss(preds, [0, 1, 0, c - 1]) - math.log(c)) <= 1e-9

    def test_perfect_prediction_is_zero(self):
        preds = np.eye(3)
        assert ce_loss(preds, [0, 1, 2]) == 0.0

    def test_label_smoothing_penalizes_certainty(self):
        preds = np.eye(3) * 0.999998 + 1e-6
        assert ce_loss(preds, [0, 1, 2], label_smoothing=0.1) > ce_loss(preds, [0, 1, 2])

    def test_rejects_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            ce_loss(np.full((1, 3), 1 / 3), [3])

    def test_rejects_count_mismatch(self):
        with pytest.raises(ValueError, match="predictions for"):
            ce_loss(np.full((2, 3), 1 / 3), [0])

    def test_rejects_bad_smoothing(self):
        with pytest.raises(ValueError, match="label_smoothing"):
            ce_loss(np.full((1, 3), 1 / 3), [0], label_smoothing=1.0)


class TestCeFromLogits:
    def test_matches_probability_form(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(5, 7))
        labels = rng.integers(0, 7, 5)
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        probs = e / e.sum(axis=-1, keepdims=True)
        loss, _ = ce_from_logits(logits, labels)
        assert abs(loss - ce_loss(probs, labels)) <= 1e-12

    def test_gradient_is_probs_minus_onehot_over_n(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(3, 4))
        labels = np.array([1, 0, 3])
        _, dlogits = ce_from_logits(logits, labels)
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        probs = e / e.sum(axis=-1, keepdims=True)
        onehot = np.zeros((3, 4))
        onehot[np.arange(3), labels] = 1.0
        np.testing.assert_allclose(dlogits, (probs - onehot) / 3.0, atol=1e-12)

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(2, 5))
        labels = np.array([4, 2])
        _, dlogits = ce_from_logits(logits, labels)
        for r in range(2):
            for c in range(5):
                shifted = logits.copy()
                shifted[r, c] += FD_EPS
                lp, _ = ce_from_logits(shifted, labels)
                shifted[r, c] -= 2 * FD_EPS
                lm, _ = ce_from_logits(shifted, labels)
                fd = (lp - lm) / (2 * FD_EPS)
                assert abs(fd - dlogits[r, c]) <= 1e-6

    def test_extreme_logits_stay_finite(self):
        loss, dlogits = ce_from_logits(np.array([[1e4, -1e4]]), np.array([1]))
        assert np.isfinite(loss) and np.all(np.isfinite(dlogits))


class TestVgcLoss:
    def test_uniform_equals_log2(self):
        logits = np.zeros((6, 2))
        assert abs(vgc_loss(logits, np.array([0, 1, 0, 1, 1, 0])) - math.log(2)) <= 1e-12

    def test_rejects_non_binary_width(self):
        with pytest.raises(ValueError, match="2-way"):
            vgc_loss(np.zeros((2, 3)), np.array([0, 1]))
