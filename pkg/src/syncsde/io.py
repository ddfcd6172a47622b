"""Tensor container and preview image formats.

Tensor files: magic "SYNB", version u16 LE, dtype code u8 (0 = f32, 1 = f64),
rank u8, then rank u32 LE dims, then the row-major little-endian payload.

Previews are binary portable graymaps (P5, one channel) or pixmaps (P6,
three channels) with values affinely mapped from [min, max] to [0, 255];
constant grids map to 128.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .grid import LatentGrid

MAGIC = b"SYNB"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}
_CODES = {"float32": 0, "float64": 1}
MAX_RANK = 4


def write_tensor(path: str | Path, data: np.ndarray, dtype: str = "float64") -> None:
    data = np.ascontiguousarray(data)
    if dtype not in _CODES:
        raise ShapeError(f"unsupported tensor dtype {dtype!r}")
    if not 1 <= data.ndim <= MAX_RANK:
        raise ShapeError(f"tensor rank {data.ndim} outside [1, {MAX_RANK}]")
    code = _CODES[dtype]
    header = MAGIC + struct.pack("<HBB", VERSION, code, data.ndim)
    header += struct.pack(f"<{data.ndim}I", *data.shape)
    payload = data.astype(_DTYPES[code]).tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise ShapeError(f"{path}: not a tensor file (bad magic)")
    version, code, rank = struct.unpack("<HBB", raw[4:8])
    if version != VERSION:
        raise ShapeError(f"{path}: unsupported tensor file version {version}")
    if code not in _DTYPES:
        raise ShapeError(f"{path}: unknown dtype code {code}")
    if not 1 <= rank <= MAX_RANK:
        raise ShapeError(f"{path}: rank {rank} outside [1, {MAX_RANK}]")
    dims_end = 8 + 4 * rank
    if len(raw) < dims_end:
        raise ShapeError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{rank}I", raw[8:dims_end])
    itemsize = 4 if code == 0 else 8
    expected = int(np.prod(dims)) * itemsize
    payload = raw[dims_end:]
    if len(payload) != expected:
        raise ShapeError(f"{path}: payload holds {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=_DTYPES[code]).reshape(dims).astype(
        np.float64 if code == 1 else np.float32
    )


def export_preview(grid: LatentGrid, path: str | Path) -> None:
    """Write a P5/P6 preview of a 1- or 3-channel grid."""
    data = grid.data
    if data.ndim == 2:  # (C, L) sequences render as a 1-pixel-tall strip
        data = data[:, None, :]
    channels, height, width = data.shape
    if channels not in (1, 3):
        raise ShapeError(f"preview needs 1 or 3 channels, got {channels}")
    lo, hi = data.min(), data.max()
    if hi - lo == 0.0:
        quantized = np.full(data.shape, 128, dtype=np.uint8)
    else:
        quantized = np.rint((data - lo) / (hi - lo) * 255.0).astype(np.uint8)
    kind = b"P5" if channels == 1 else b"P6"
    header = kind + f"\n{width} {height}\n255\n".encode("ascii")
    # P6 interleaves RGB per pixel; P5 is the bare plane.
    body = quantized[0] if channels == 1 else np.moveaxis(quantized, 0, -1)
    Path(path).write_bytes(header + body.tobytes())
