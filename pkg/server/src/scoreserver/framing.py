"""Wire primitives: length-prefixed JSON frames and the schedule digest.

Frames are UTF-8 JSON prefixed by a 4-byte big-endian payload length. The
schedule digest is the lowercase hex of a 64-bit FNV-1a hash over the alpha
sequence serialized as little-endian f64, and must match between client and
server before any eps traffic.
"""

from __future__ import annotations

import base64
import json
import struct
from typing import BinaryIO

import numpy as np

MAX_FRAME = 256 * 1024 * 1024

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class FrameError(Exception):
    """Unrecoverable framing problem; the connection should close."""


def schedule_digest(alphas) -> str:
    h = FNV_OFFSET
    for b in np.asarray(alphas, dtype="<f8").tobytes():
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def write_frame(stream: BinaryIO, message: dict) -> None:
    payload = json.dumps(message, separators=(",", ":")).encode("utf-8")
    stream.write(struct.pack(">I", len(payload)) + payload)
    stream.flush()


def read_frame(stream: BinaryIO) -> dict | None:
    """One message, or None on clean EOF. Raises FrameError on garbage."""
    header = stream.read(4)
    if not header:
        return None
    if len(header) < 4:
        raise FrameError("truncated length prefix")
    (length,) = struct.unpack(">I", header)
    if length == 0 or length > MAX_FRAME:
        raise FrameError(f"frame length {length} out of range")
    payload = b""
    while len(payload) < length:
        chunk = stream.read(length - len(payload))
        if not chunk:
            raise FrameError("connection closed mid-frame")
        payload += chunk
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"unparseable frame: {exc}") from exc
    if not isinstance(message, dict):
        raise FrameError("frame is not a JSON object")
    return message


def decode_f32(text: str) -> np.ndarray:
    raw = base64.b64decode(text, validate=True)
    if len(raw) % 4:
        raise FrameError(f"f32 payload of {len(raw)} bytes")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def encode_f32(values: np.ndarray) -> str:
    return base64.b64encode(np.asarray(values, dtype="<f4").tobytes()).decode("ascii")
