"""Pre-norm transformer encoder in plain numpy, forward and backward.

Block: x + attn(ln1(x)), then + mlp(ln2(x)), final layer norm, classification
from the class token through a shared linear head. All operations preserve the
input dtype, so float32 runs the training loop and float64 feeds the
finite-difference gradient checks.
"""

import math

import numpy as np

from .params import ModelConfig
from .tokenize import TokenSequence

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = x - x.max(axis=axis, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=axis, keepdims=True)
    return e


def gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tanh-approximation GELU; returns (value, tanh term) for the backward pass."""
    t = x * x
    t *= x
    t *= _GELU_A
    t += x
    t *= _GELU_C
    np.tanh(t, out=t)
    out = t + 1.0
    out *= x
    out *= 0.5
    return out, t


def gelu_backward(dy: np.ndarray, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    inner = x * x
    inner *= 3.0 * _GELU_A
    inner += 1.0
    inner *= _GELU_C
    inner *= 1.0 - t * t
    inner *= x
    inner += 1.0 + t
    inner *= 0.5
    inner *= dy
    return inner


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layer_norm_backward(dy, cache, g, grads_g, grads_b):
    xhat, inv = cache
    grads_g += (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    grads_b += dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return (dxhat - mean1 - xhat * mean2) * inv


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, l, d = x.shape
    return x.reshape(b, l, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, l, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * hd)


def attention(x: np.ndarray, prefix: str, params: dict, cfg: ModelConfig):
    q = _split_heads(x @ params[prefix + "wq"] + params[prefix + "bq"], cfg.heads)
    k = _split_heads(x @ params[prefix + "wk"] + params[prefix + "bk"], cfg.heads)
    v = _split_heads(x @ params[prefix + "wv"] + params[prefix + "bv"], cfg.heads)
    scale = 1.0 / math.sqrt(cfg.head_dim)
    scores = q @ k.transpose(0, 1, 3, 2)
    scores *= scale
    a = softmax(scores)
    ctx = _merge_heads(a @ v)
    out = ctx @ params[prefix + "wo"] + params[prefix + "bo"]
    return out, (x, q, k, v, a, ctx)


def attention_backward(dout, cache, prefix: str, params: dict, cfg: ModelConfig, grads: dict):
    x, q, k, v, a, ctx = cache
    b, l, d = x.shape
    scale = 1.0 / math.sqrt(cfg.head_dim)

    grads[prefix + "wo"] += ctx.reshape(-1, d).T @ dout.reshape(-1, d)
    grads[prefix + "bo"] += dout.sum(axis=(0, 1))
    dctx = _split_heads(dout @ params[prefix + "wo"].T, cfg.heads)

    da = dctx @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ dctx
    da -= (da * a).sum(axis=-1, keepdims=True)
    da *= a
    da *= scale
    dscores = da
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    dx = np.zeros_like(x)
    for name, grad in (("q", dq), ("k", dk), ("v", dv)):
        gm = _merge_heads(grad)
        grads[prefix + "w" + name] += x.reshape(-1, d).T @ gm.reshape(-1, d)
        grads[prefix + "b" + name] += gm.sum(axis=(0, 1))
        dx += gm @ params[prefix + "w" + name].T
    return dx


def mlp(x: np.ndarray, prefix: str, params: dict):
    h = x @ params[prefix + "w1"] + params[prefix + "b1"]
    act, t = gelu(h)
    out = act @ params[prefix + "w2"] + params[prefix + "b2"]
    return out, (x, h, t, act)


def mlp_backward(dout, cache, prefix: str, params: dict, grads: dict):
    x, h, t, act = cache
    d = x.shape[-1]
    dh_out = act.shape[-1]
    grads[prefix + "w2"] += act.reshape(-1, dh_out).T @ dout.reshape(-1, d)
    grads[prefix + "b2"] += dout.sum(axis=(0, 1))
    dact = dout @ params[prefix + "w2"].T
    dh = gelu_backward(dact, h, t)
    grads[prefix + "w1"] += x.reshape(-1, d).T @ dh.reshape(-1, dh_out)
    grads[prefix + "b1"] += dh.sum(axis=(0, 1))
    return dh @ params[prefix + "w1"].T


def encode(x: np.ndarray, params: dict, cfg: ModelConfig):
    """Full encoder over (B, L, D) tokens; returns (normed output, cache)."""
    caches = []
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        ln1, c_ln1 = layer_norm(x, params[b + "ln1.g"], params[b + "ln1.b"], cfg.ln_eps)
        att, c_att = attention(ln1, b + "attn.", params, cfg)
        x1 = x + att
        ln2, c_ln2 = layer_norm(x1, params[b + "ln2.g"], params[b + "ln2.b"], cfg.ln_eps)
        mm, c_mlp = mlp(ln2, b + "mlp.", params)
        x = x1 + mm
        caches.append((c_ln1, c_att, c_ln2, c_mlp))
    out, c_final = layer_norm(x, params["final_ln.g"], params["final_ln.b"], cfg.ln_eps)
    return out, (caches, c_final)


def encode_backward(dout, cache, params: dict, cfg: ModelConfig, grads: dict):
    caches, c_final = cache
    dx = layer_norm_backward(
        dout, c_final, params["final_ln.g"], grads["final_ln.g"], grads["final_ln.b"]
    )
    for i in range(cfg.depth - 1, -1, -1):
        b = f"blocks.{i}."
        c_ln1, c_att, c_ln2, c_mlp = caches[i]
        dmlp_in = mlp_backward(dx, c_mlp, b + "mlp.", params, grads)
        dx1 = dx + layer_norm_backward(
            dmlp_in, c_ln2, params[b + "ln2.g"], grads[b + "ln2.g"], grads[b + "ln2.b"]
        )
        datt_in = attention_backward(dx1, c_att, b + "attn.", params, cfg, grads)
        dx = dx1 + layer_norm_backward(
            datt_in, c_ln1, params[b + "ln1.g"], grads[b + "ln1.g"], grads[b + "ln1.b"]
        )
    return dx


def classify(encoded: np.ndarray, params: dict, head: str = "head") -> np.ndarray:
    """Class-token logits through the shared linear head: (B, n_out)."""
    return encoded[:, 0, :] @ params[head + ".w"] + params[head + ".b"]


def classify_backward(dlogits, encoded, params: dict, grads: dict, head: str = "head"):
    grads[head + ".w"] += encoded[:, 0, :].T @ dlogits
    grads[head + ".b"] += dlogits.sum(axis=0)
    dout = np.zeros_like(encoded)
    dout[:, 0, :] = dlogits @ params[head + ".w"].T
    return dout


def forward(seq: TokenSequence, params: dict, cfg: ModelConfig) -> np.ndarray:
    """Single token sequence -> class-probability vector."""
    encoded, _ = encode(seq.tokens[None], params, cfg)
    return softmax(classify(encoded, params))[0]
