"""Turning images and point clouds into token sequences, with backward passes.

Images: non-overlapping square patches, flattened and linearly embedded, plus
a learned per-position vector. Point clouds: farthest-point-sampled group
centers, fixed-size nearest-neighbor groups re-centered on their center, a
shared pointwise MLP max-pooled per group, plus an MLP of the center acting as
the positional term. A single shared class token heads every sequence.
"""

from dataclasses import dataclass

import numpy as np

from .. import kernels
from .params import ModelConfig


@dataclass(frozen=True)
class TokenSequence:
    """Embedded tokens, class token first; modality is visual/geometric/joint."""

    tokens: np.ndarray  # (L, dim)
    modality: str


def image_patches(image: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(H, W, C) uint8 -> (n_patches, patch_dim) float64 intensities in [-1, 1].

    The symmetric range matches what the trainer feeds the embedding, so
    checkpoints behave identically at single-instance inference time.
    """
    expected = (cfg.image_size, cfg.image_size, cfg.channels)
    if image.shape != expected:
        raise ValueError(f"image shape {image.shape} does not match {expected}")
    g = cfg.image_size // cfg.patch_size
    p = cfg.patch_size
    x = image.reshape(g, p, g, p, cfg.channels).transpose(0, 2, 1, 3, 4)
    return x.reshape(g * g, cfg.patch_dim).astype(np.float64) / 127.5 - 1.0


def group_cloud(points: np.ndarray, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Select centers by farthest-point sampling and gather re-centered groups.

    Returns (groups (k, m, 3), centers (k, 3)). Sampling starts from the point
    farthest from the centroid, so the token set does not depend on input
    order; all ties break toward the lowest index.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array, got shape {pts.shape}")
    k, m = cfg.point_patches, cfg.point_patch_size
    if pts.shape[0] < max(k, m):
        raise ValueError(f"need at least {max(k, m)} points, got {pts.shape[0]}")
    centroid = pts.mean(axis=0)
    start = int(np.argmax(((pts - centroid) ** 2).sum(axis=1)))
    centers_idx = np.zeros(k, dtype=np.int64)
    kernels.fps_select(pts, start, centers_idx, np.zeros(pts.shape[0]))
    centers = pts[centers_idx]
    diff = pts[None, :, :] - centers[:, None, :]
    dist = (diff * diff).sum(axis=-1)
    nbr = np.argsort(dist, axis=1, kind="stable")[:, :m]
    groups = pts[nbr] - centers[:, None, :]
    return groups, centers


def embed_images(patches: np.ndarray, params: dict) -> tuple[np.ndarray, dict]:
    """(B, M, patch_dim) -> (B, M, dim) tokens plus backward cache."""
    tok = patches @ params["patch_embed.w"] + params["patch_embed.b"] + params["pos_image"]
    return tok, {"patches": patches}


def embed_images_backward(dtok: np.ndarray, cache: dict, grads: dict) -> None:
    patches = cache["patches"]
    f = patches.shape[-1]
    d = dtok.shape[-1]
    grads["patch_embed.w"] += patches.reshape(-1, f).T @ dtok.reshape(-1, d)
    grads["patch_embed.b"] += dtok.sum(axis=(0, 1))
    grads["pos_image"] += dtok.sum(axis=0)


def embed_clouds(groups: np.ndarray, centers: np.ndarray, params: dict) -> tuple[np.ndarray, dict]:
    """(B, k, m, 3) groups and (B, k, 3) centers -> (B, k, dim) tokens plus cache.

    Token = max-pool over the group of a shared two-layer ReLU MLP, plus a
    two-layer ReLU MLP of the center as the positional term.
    """
    h1 = groups @ params["point_embed.w1"] + params["point_embed.b1"]
    a1 = np.maximum(h1, 0.0)
    h2 = a1 @ params["point_embed.w2"] + params["point_embed.b2"]
    arg = h2.argmax(axis=2)  # (B, k, dim); first index wins ties
    pooled = np.take_along_axis(h2, arg[:, :, None, :], axis=2)[:, :, 0, :]
    p1 = centers @ params["pos_point.w1"] + params["pos_point.b1"]
    pa = np.maximum(p1, 0.0)
    pos = pa @ params["pos_point.w2"] + params["pos_point.b2"]
    cache = {"groups": groups, "h1": h1, "a1": a1, "arg": arg, "centers": centers, "p1": p1, "pa": pa}
    return pooled + pos, cache


def embed_clouds_backward(dtok: np.ndarray, cache: dict, params: dict, grads: dict) -> None:
    groups, h1, a1, arg = cache["groups"], cache["h1"], cache["a1"], cache["arg"]
    centers, p1, pa = cache["centers"], cache["p1"], cache["pa"]
    d = dtok.shape[-1]

    # positional branch
    grads["pos_point.w2"] += pa.reshape(-1, pa.shape[-1]).T @ dtok.reshape(-1, d)
    grads["pos_point.b2"] += dtok.sum(axis=(0, 1))
    dpa = dtok @ params["pos_point.w2"].T
    dp1 = dpa * (p1 > 0.0)
    grads["pos_point.w1"] += centers.reshape(-1, 3).T @ dp1.reshape(-1, dp1.shape[-1])
    grads["pos_point.b1"] += dp1.sum(axis=(0, 1))

    # feature branch: route the pooled gradient to each channel's argmax point
    dh2 = np.zeros(groups.shape[:3] + (d,), dtype=dtok.dtype)
    np.put_along_axis(dh2, arg[:, :, None, :], dtok[:, :, None, :], axis=2)
    h = a1.shape[-1]
    grads["point_embed.w2"] += a1.reshape(-1, h).T @ dh2.reshape(-1, d)
    grads["point_embed.b2"] += dh2.sum(axis=(0, 1, 2))
    da1 = dh2 @ params["point_embed.w2"].T
    dh1 = da1 * (h1 > 0.0)
    grads["point_embed.w1"] += groups.reshape(-1, 3).T @ dh1.reshape(-1, h)
    grads["point_embed.b1"] += dh1.sum(axis=(0, 1, 2))


def build_sequence(
    img_tok: np.ndarray | None, pt_tok: np.ndarray | None, params: dict
) -> np.ndarray:
    """Prepend the shared class token and concatenate modality tokens: (B, L, D)."""
    parts = [t for t in (img_tok, pt_tok) if t is not None]
    if not parts:
        raise ValueError("at least one modality is required")
    b = parts[0].shape[0]
    cls = np.broadcast_to(params["cls"], (b, 1, params["cls"].shape[0])).astype(parts[0].dtype)
    return np.concatenate([cls] + parts, axis=1)


def split_sequence_grad(
    dx: np.ndarray, n_image: int, n_point: int, grads: dict
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Undo build_sequence: accumulate the class-token gradient, return the rest."""
    grads["cls"] += dx[:, 0, :].sum(axis=0)
    dimg = dx[:, 1 : 1 + n_image, :] if n_image else None
    dpt = dx[:, 1 + n_image : 1 + n_image + n_point, :] if n_point else None
    return dimg, dpt


def tokenize_image(image: np.ndarray, params: dict, cfg: ModelConfig) -> TokenSequence:
    """Single image -> class token plus patch tokens."""
    patches = image_patches(image, cfg)[None]
    tok, _ = embed_images(patches, params)
    return TokenSequence(tokens=build_sequence(tok, None, params)[0], modality="visual")


def tokenize_cloud(points: np.ndarray, params: dict, cfg: ModelConfig) -> TokenSequence:
    """Single cloud -> class token plus group tokens."""
    groups, centers = group_cloud(points, cfg)
    tok, _ = embed_clouds(groups[None], centers[None], params)
    return TokenSequence(tokens=build_sequence(None, tok, params)[0], modality="geometric")


def tokenize_joint(
    image: np.ndarray, points: np.ndarray, params: dict, cfg: ModelConfig
) -> TokenSequence:
    """Paired sample -> one class token, patch tokens, then group tokens."""
    patches = image_patches(image, cfg)[None]
    img_tok, _ = embed_images(patches, params)
    groups, centers = group_cloud(points, cfg)
    pt_tok, _ = embed_clouds(groups[None], centers[None], params)
    return TokenSequence(tokens=build_sequence(img_tok, pt_tok, params)[0], modality="joint")
