"""Model configuration, parameter initialization and checkpoint serialization."""

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

_MASK64 = (1 << 64) - 1
_CKPT_MAGIC = b"VGCK"
_CKPT_VERSION = 1
_DTYPE_CODES = {0: np.float64, 1: np.float32}
_CODE_FOR = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CONFIG_KEY = "__config__"


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    image_size: int = 224
    patch_size: int = 16
    channels: int = 3
    point_patches: int = 64
    point_patch_size: int = 32
    point_hidden: int = 64
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"patch_size {self.patch_size} does not divide image_size {self.image_size}"
            )
        if self.dim % self.heads != 0:
            raise ValueError(f"heads {self.heads} does not divide dim {self.dim}")
        for name in ("dim", "depth", "heads", "mlp_ratio", "point_patches", "point_patch_size", "point_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def n_image_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


# Encoder sizes from small experiments upward. "tiny" is the harness default.
PRESETS = {
    "tiny": {"dim": 64, "depth": 4, "heads": 4},
    "small": {"dim": 384, "depth": 12, "heads": 6},
    "base": {"dim": 768, "depth": 12, "heads": 12},
}


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Gaussian(0, 0.02) weights, zero biases, unit layer-norm gains; float64."""
    rng = np.random.default_rng(seed & _MASK64)
    d = cfg.dim
    p: dict[str, np.ndarray] = {}

    def g(*shape):
        return rng.normal(0.0, 0.02, shape)

    p["cls"] = g(d)
    p["patch_embed.w"] = g(cfg.patch_dim, d)
    p["patch_embed.b"] = np.zeros(d)
    p["pos_image"] = g(cfg.n_image_tokens, d)
    p["point_embed.w1"] = g(3, cfg.point_hidden)
    p["point_embed.b1"] = np.zeros(cfg.point_hidden)
    p["point_embed.w2"] = g(cfg.point_hidden, d)
    p["point_embed.b2"] = np.zeros(d)
    p["pos_point.w1"] = g(3, cfg.point_hidden)
    p["pos_point.b1"] = np.zeros(cfg.point_hidden)
    p["pos_point.w2"] = g(cfg.point_hidden, d)
    p["pos_point.b2"] = np.zeros(d)
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        p[b + "ln1.g"] = np.ones(d)
        p[b + "ln1.b"] = np.zeros(d)
        p[b + "attn.wq"] = g(d, d)
        p[b + "attn.bq"] = np.zeros(d)
        p[b + "attn.wk"] = g(d, d)
        p[b + "attn.bk"] = np.zeros(d)
        p[b + "attn.wv"] = g(d, d)
        p[b + "attn.bv"] = np.zeros(d)
        p[b + "attn.wo"] = g(d, d)
        p[b + "attn.bo"] = np.zeros(d)
        p[b + "ln2.g"] = np.ones(d)
        p[b + "ln2.b"] = np.zeros(d)
        p[b + "mlp.w1"] = g(d, d * cfg.mlp_ratio)
        p[b + "mlp.b1"] = np.zeros(d * cfg.mlp_ratio)
        p[b + "mlp.w2"] = g(d * cfg.mlp_ratio, d)
        p[b + "mlp.b2"] = np.zeros(d)
    p["final_ln.g"] = np.ones(d)
    p["final_ln.b"] = np.zeros(d)
    p["head.w"] = g(d, cfg.num_classes)
    p["head.b"] = np.zeros(cfg.num_classes)
    p["vgc.w"] = g(d, 2)
    p["vgc.b"] = np.zeros(2)
    return p


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], cfg: ModelConfig) -> None:
    """Little-endian named-tensor container; the config rides along as JSON."""
    out = bytearray()
    cfg_blob = np.frombuffer(json.dumps(asdict(cfg), sort_keys=True).encode("utf-8"), dtype=np.uint8)
    entries = [(_CONFIG_KEY, cfg_blob)] + sorted(params.items())
    out += _CKPT_MAGIC
    out += struct.pack("<II", _CKPT_VERSION, len(entries))
    for name, arr in entries:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw))
        out += raw
        if name == _CONFIG_KEY:
            code = 255
        else:
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _CODE_FOR:
                raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
            code = _CODE_FOR[arr.dtype]
        out += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += struct.pack("<B", code)
        out += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    from ..formats import atomic_write_bytes

    atomic_write_bytes(path, bytes(out))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], ModelConfig]:
    data = Path(path).read_bytes()
    if data[:4] != _CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    params: dict[str, np.ndarray] = {}
    cfg = None
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        ndim = data[pos]
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        code = data[pos]
        pos += 1
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        if name == _CONFIG_KEY:
            blob = data[pos : pos + n_items]
            cfg = ModelConfig(**json.loads(blob.decode("utf-8")))
            pos += n_items
            continue
        if code not in _DTYPE_CODES:
            raise ValueError(f"{name}: unknown dtype code {code}")
        dtype = np.dtype(_DTYPE_CODES[code]).newbyteorder("<")
        nbytes = n_items * dtype.itemsize
        arr = np.frombuffer(data, dtype=dtype, count=n_items, offset=pos).reshape(shape)
        params[name] = arr.astype(_DTYPE_CODES[code])
        pos += nbytes
    if cfg is None:
        raise ValueError("checkpoint missing embedded config")
    return params, cfg
