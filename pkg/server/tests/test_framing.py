import io
import json
import struct

import numpy as np
import pytest

from scoreserver.framing import (
    FrameError,
    decode_f32,
    encode_f32,
    read_frame,
    schedule_digest,
    write_frame,
)


def test_digest_known_vector():
    # Direct FNV-1a loop over the packed doubles.
    alphas = [1.0, 0.5]
    h = 0xCBF29CE484222325
    for value in alphas:
        for b in struct.pack("<d", value):
            h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    assert schedule_digest(alphas) == f"{h:016x}"


def test_frame_round_trip():
    buf = io.BytesIO()
    message = {"type": "eps", "id": 3, "data": "AAAA"}
    write_frame(buf, message)
    buf.seek(0)
    assert read_frame(buf) == message


def test_read_frame_eof_returns_none():
    assert read_frame(io.BytesIO()) is None


def test_read_frame_rejects_garbage():
    buf = io.BytesIO(struct.pack(">I", 4) + b"\xff\xfe\x00\x01")
    with pytest.raises(FrameError):
        read_frame(buf)


def test_read_frame_rejects_truncation():
    buf = io.BytesIO(struct.pack(">I", 100) + b"{}")
    with pytest.raises(FrameError):
        read_frame(buf)


def test_f32_round_trip():
    values = np.array([0.5, -1.25, 3.0])
    decoded = decode_f32(encode_f32(values))
    assert np.array_equal(decoded, values)


def test_decode_rejects_ragged_payload():
    with pytest.raises(FrameError):
        decode_f32("AAAAAAA=")  # decodes to 5 bytes, not a whole float
