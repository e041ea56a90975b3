"""Encoder forward pass against a straight-line reference, checkpoint I/O."""

import math

import numpy as np
import pytest

from vgforge.model import encoder
from vgforge.model.params import ModelConfig, init_params, load_checkpoint, save_checkpoint
from vgforge.model.tokenize import TokenSequence

CFG = ModelConfig(
    num_classes=5, dim=16, depth=2, heads=2, mlp_ratio=2, image_size=8, patch_size=4,
    channels=1, point_patches=4, point_patch_size=8, point_hidden=8,
)


def _reference_encode(x, params, cfg):
    """Same architecture written as independent plain-numpy steps."""

    def ln(v, g, b):
        mu = v.mean(axis=-1, keepdims=True)
        var = v.var(axis=-1, keepdims=True)
        return (v - mu) / np.sqrt(var + cfg.ln_eps) * g + b

    def gelu(v):
        return 0.5 * v * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (v + 0.044715 * v**3)))

    def sm(v):
        e = np.exp(v - v.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    h = cfg.heads
    hd = cfg.head_dim
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        n1 = ln(x, params[b + "ln1.g"], params[b + "ln1.b"])
        heads_out = []
        for hh in range(h):
            sl = slice(hh * hd, (hh + 1) * hd)
            q = n1 @ params[b + "attn.wq"][:, sl] + params[b + "attn.bq"][sl]
            k = n1 @ params[b + "attn.wk"][:, sl] + params[b + "attn.bk"][sl]
            v = n1 @ params[b + "attn.wv"][:, sl] + params[b + "attn.bv"][sl]
            a = sm(q @ k.swapaxes(-1, -2) / math.sqrt(hd))
            heads_out.append(a @ v)
        ctx = np.concatenate(heads_out, axis=-1)
        x = x + (ctx @ params[b + "attn.wo"] + params[b + "attn.bo"])
        n2 = ln(x, params[b + "ln2.g"], params[b + "ln2.b"])
        x = x + (gelu(n2 @ params[b + "mlp.w1"] + params[b + "mlp.b1"]) @ params[b + "mlp.w2"] + params[b + "mlp.b2"])
    return ln(x, params["final_ln.g"], params["final_ln.b"])


class TestSoftmax:
    def test_rows_sum_to_one(self):
        x = np.random.default_rng(0).normal(size=(4, 7)) * 10
        s = encoder.softmax(x)
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(s > 0)

    def test_shift_invariant_and_overflow_safe(self):
        x = np.array([[1e4, 1e4 + 1.0]])
        s = encoder.softmax(x)
        np.testing.assert_allclose(s, encoder.softmax(x - 1e4), atol=1e-12)
        assert np.all(np.isfinite(s))

    def test_does_not_mutate_input(self):
        x = np.ones((2, 3))
        encoder.softmax(x)
        np.testing.assert_array_equal(x, np.ones((2, 3)))


class TestGelu:
    def test_matches_closed_form(self):
        x = np.linspace(-4, 4, 101)
        got, _ = encoder.gelu(x)
        want = 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_fixed_values(self):
        got, _ = encoder.gelu(np.array([0.0, 1.0, -1.0]))
        np.testing.assert_allclose(got, [0.0, 0.841192, -0.158808], atol=1e-6)

    def test_does_not_mutate_input(self):
        x = np.full(5, 2.0)
        encoder.gelu(x)
        np.testing.assert_array_equal(x, np.full(5, 2.0))


class TestLayerNorm:
    def test_normalizes_rows(self):
        x = np.random.default_rng(1).normal(3.0, 5.0, (2, 6, 16))
        out, _ = encoder.layer_norm(x, np.ones(16), np.zeros(16), 1e-5)
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-3)

    def test_gain_and_bias_apply(self):
        x = np.random.default_rng(2).normal(size=(1, 4, 8))
        plain, _ = encoder.layer_norm(x, np.ones(8), np.zeros(8), 1e-5)
        scaled, _ = encoder.layer_norm(x, np.full(8, 2.0), np.full(8, 0.5), 1e-5)
        np.testing.assert_allclose(scaled, plain * 2.0 + 0.5, atol=1e-12)


class TestEncode:
    def test_matches_independent_reference(self):
        params = init_params(CFG, seed=3)
        x = np.random.default_rng(4).normal(size=(2, 9, CFG.dim))
        got, _ = encoder.encode(x, params, CFG)
        want = _reference_encode(x.copy(), params, CFG)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_preserves_dtype(self):
        params = {k: v.astype(np.float32) for k, v in init_params(CFG, seed=3).items()}
        x = np.random.default_rng(5).normal(size=(1, 4, CFG.dim)).astype(np.float32)
        out, _ = encoder.encode(x, params, CFG)
        assert out.dtype == np.float32

    def test_zero_head_gives_uniform_probabilities(self):
        params = init_params(CFG, seed=6)
        params["head.w"][:] = 0.0
        params["head.b"][:] = 0.0
        seq = TokenSequence(
            tokens=np.random.default_rng(7).normal(size=(9, CFG.dim)), modality="joint"
        )
        probs = encoder.forward(seq, params, CFG)
        np.testing.assert_allclose(probs, np.full(CFG.num_classes, 0.2), atol=1e-12)

    def test_classify_reads_class_token_only(self):
        params = init_params(CFG, seed=8)
        enc = np.random.default_rng(9).normal(size=(2, 9, CFG.dim))
        logits = encoder.classify(enc, params)
        enc2 = enc.copy()
        enc2[:, 1:, :] = 0.0
        np.testing.assert_array_equal(logits, encoder.classify(enc2, params))
        assert logits.shape == (2, CFG.num_classes)

    def test_pair_head_uses_two_outputs(self):
        params = init_params(CFG, seed=10)
        enc = np.random.default_rng(11).normal(size=(3, 5, CFG.dim))
        assert encoder.classify(enc, params, head="vgc").shape == (3, 2)


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        params = init_params(CFG, seed=12)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, CFG)
        loaded, cfg = load_checkpoint(path)
        assert cfg == CFG
        assert sorted(loaded) == sorted(params)
        for k in params:
            np.testing.assert_array_equal(loaded[k], params[k])
            assert loaded[k].dtype == params[k].dtype

    def test_float32_round_trip(self, tmp_path):
        params = {k: v.astype(np.float32) for k, v in init_params(CFG, seed=13).items()}
        path = tmp_path / "model32.ckpt"
        save_checkpoint(path, params, CFG)
        loaded, _ = load_checkpoint(path)
        for k in params:
            assert loaded[k].dtype == np.float32
            np.testing.assert_array_equal(loaded[k], params[k])

    def test_rejects_corrupt_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, init_params(CFG, seed=14), CFG)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="bad checkpoint magic"):
            load_checkpoint(path)

    def test_deterministic_bytes(self, tmp_path):
        params = init_params(CFG, seed=15)
        save_checkpoint(tmp_path / "a.ckpt", params, CFG)
        save_checkpoint(tmp_path / "b.ckpt", params, CFG)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
