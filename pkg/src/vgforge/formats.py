"""On-disk formats and deterministic byte-level utilities.

Point clouds use a small binary container (magic ``VGPC``); images are written
by a minimal in-package PNG encoder (8-bit RGB, filter 0, one IDAT, fixed
compression level) so that output bytes depend only on the pixels, not on an
image library's encoder settings. Seed derivation, the canonical JSON form
used for manifest digests, and the shared shuffle/iteration order also live
here because loaders in other languages must reproduce them byte for byte.
"""

import hashlib
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

PCB_MAGIC = b"VGPC"
PCB_VERSION = 1
_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_ZLIB_LEVEL = 6
_MASK64 = (1 << 64) - 1


class FormatError(ValueError):
    """Raised when a file fails structural validation."""


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory plus rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def encode_pcb(points: np.ndarray) -> bytes:
    pts = np.ascontiguousarray(points, dtype="<f4")
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array, got shape {pts.shape}")
    return PCB_MAGIC + struct.pack("<II", PCB_VERSION, pts.shape[0]) + pts.tobytes()


def write_pcb(path: str | Path, points: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pcb(points))


def decode_pcb(data: bytes) -> np.ndarray:
    """Parse point-cloud bytes back to (n, 3) float32."""
    if len(data) < 12:
        raise FormatError(f"point-cloud blob too short: {len(data)} bytes")
    if data[:4] != PCB_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {PCB_MAGIC!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != PCB_VERSION:
        raise FormatError(f"unsupported point-cloud version {version}")
    expected = 12 + count * 12
    if len(data) != expected:
        raise FormatError(f"size mismatch: {len(data)} bytes for {count} points, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(count, 3).copy()


def read_pcb(path: str | Path) -> np.ndarray:
    return decode_pcb(Path(path).read_bytes())


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))


def encode_png(pixels: np.ndarray) -> bytes:
    """Encode (h, w, 3) uint8 pixels as a fixed-layout RGB PNG."""
    px = np.ascontiguousarray(pixels, dtype=np.uint8)
    if px.ndim != 3 or px.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) uint8 array, got shape {px.shape}")
    h, w = px.shape[:2]
    raw = np.empty((h, w * 3 + 1), dtype=np.uint8)
    raw[:, 0] = 0  # filter type 0 per scanline
    raw[:, 1:] = px.reshape(h, w * 3)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    idat = zlib.compress(raw.tobytes(), _ZLIB_LEVEL)
    return _PNG_SIG + _png_chunk(b"IHDR", ihdr) + _png_chunk(b"IDAT", idat) + _png_chunk(b"IEND", b"")


def write_png(path: str | Path, pixels: np.ndarray) -> None:
    atomic_write_bytes(path, encode_png(pixels))


def decode_png(data: bytes) -> np.ndarray:
    """Decode an 8-bit RGB non-interlaced PNG into (h, w, 3) uint8.

    Handles all five scanline filters, so files from other encoders with the
    same color layout also parse.
    """
    if data[:8] != _PNG_SIG:
        raise FormatError("not a PNG file")
    pos = 8
    width = height = None
    idat = b""
    while pos + 8 <= len(data):
        (length,) = struct.unpack_from(">I", data, pos)
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        if len(payload) != length:
            raise FormatError("truncated PNG chunk")
        if tag == b"IHDR":
            width, height, bit_depth, color_type, _, _, interlace = struct.unpack(">IIBBBBB", payload)
            if bit_depth != 8 or color_type != 2 or interlace != 0:
                raise FormatError(
                    f"unsupported PNG layout: depth={bit_depth} color={color_type} interlace={interlace}"
                )
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
        pos += 12 + length
    if width is None:
        raise FormatError("PNG missing IHDR")
    raw = zlib.decompress(idat)
    stride = width * 3
    if len(raw) != height * (stride + 1):
        raise FormatError(f"PNG data length {len(raw)} does not match {width}x{height}")
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(height):
        row_start = y * (stride + 1)
        ftype = raw[row_start]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=row_start + 1).astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = np.zeros(stride, dtype=np.int32)
            for x in range(stride):
                a = cur[x - 3] if x >= 3 else 0
                b = prev[x]
                if ftype == 1:
                    cur[x] = (line[x] + a) & 0xFF
                elif ftype == 3:
                    cur[x] = (line[x] + (a + b) // 2) & 0xFF
                else:
                    c = prev[x - 3] if x >= 3 else 0
                    p = a + b - c
                    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                    pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                    cur[x] = (line[x] + pred) & 0xFF
        else:
            raise FormatError(f"unknown PNG filter type {ftype}")
        out[y] = cur.astype(np.uint8)
        prev = cur
    return out.reshape(height, width, 3)


def read_png(path: str | Path) -> np.ndarray:
    return decode_png(Path(path).read_bytes())


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def canonical_json(obj) -> str:
    """Stable JSON text: sorted keys, no whitespace, exact float repr."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def derive_seed(*parts: int | str) -> int:
    """Stable 64-bit seed from a tagged tuple of ints and strings.

    Strings are length-framed UTF-8, ints are unsigned 64-bit little-endian,
    all fed through SHA-256; the low 8 digest bytes form the seed. Independent
    of platform, process count and scheduling.
    """
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, str):
            raw = p.encode("utf-8")
            h.update(b"s")
            h.update(len(raw).to_bytes(4, "little"))
            h.update(raw)
        elif isinstance(p, (int, np.integer)):
            h.update(b"i")
            h.update((int(p) & _MASK64).to_bytes(8, "little"))
        else:
            raise TypeError(f"seed parts must be int or str, got {type(p).__name__}")
    return int.from_bytes(h.digest()[:8], "little")


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def iteration_order(n: int, shuffle_seed: int) -> np.ndarray:
    """Deterministic permutation of [0, n) shared with out-of-process loaders.

    Fisher-Yates driven by splitmix64 with ``j = next() % (i + 1)``, descending
    i. Pure 64-bit integer math, so any language can reproduce it exactly.
    """
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    idx = np.arange(n, dtype=np.int64)
    state = shuffle_seed & _MASK64
    for i in range(n - 1, 0, -1):
        state, z = splitmix64(state)
        j = z % (i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def label_stream_digest(labels, shuffle_seed: int) -> str:
    """SHA-256 over uint32-LE labels visited in ``iteration_order``.

    The cross-language handshake: a loader that shuffles correctly produces
    this exact digest from the manifest labels.
    """
    arr = np.asarray(labels, dtype=np.uint32)
    order = iteration_order(arr.shape[0], shuffle_seed)
    return sha256_bytes(arr[order].astype("<u4").tobytes())
