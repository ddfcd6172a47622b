"""Client side of the score-provider wire protocol.

Messages are UTF-8 JSON, each prefixed by a 4-byte big-endian length.
Handshake: client sends {"type": "hello", "version": 1, "schedule_digest": hex}
and the provider replies {"type": "ready", "conditions": [...]}. Each eps
request carries a u64 id, the timestep, alpha_t, the condition id, the latent
shape, and the latent payload as base64 little-endian f32; the provider
answers with eps_ok (same id, f32 payload) or an error message. Responses may
arrive out of order; ids disambiguate.

schedule_digest is the lowercase hex of a 64-bit FNV-1a hash over the alpha
list serialized as little-endian f64.
"""

from __future__ import annotations

import base64
import json
import shlex
import socket
import subprocess
from typing import BinaryIO

import numpy as np

from .errors import HandshakeError, ProviderContractError, ScoreModelError, TransportError
from .grid import LatentGrid
from .schedule import NoiseSchedule

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 256 * 1024 * 1024

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def schedule_digest(sched: NoiseSchedule) -> str:
    """64-bit FNV-1a over alpha_0..alpha_T as little-endian f64, lowercase hex."""
    h = _FNV_OFFSET
    for b in np.asarray(sched.alphas, dtype="<f8").tobytes():
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def encode_frame(message: dict) -> bytes:
    payload = json.dumps(message, separators=(",", ":")).encode("utf-8")
    return len(payload).to_bytes(4, "big") + payload


def read_frame(stream: BinaryIO) -> dict:
    """Read one length-prefixed JSON message; raises on EOF or garbage."""
    header = _read_exact(stream, 4)
    length = int.from_bytes(header, "big")
    if length == 0 or length > MAX_FRAME_BYTES:
        raise ProviderContractError(f"invalid frame length {length}")
    payload = _read_exact(stream, length)
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProviderContractError(f"unparseable frame: {exc}") from exc
    if not isinstance(message, dict):
        raise ProviderContractError("frame is not a JSON object")
    return message


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        try:
            chunk = stream.read(remaining)
        except OSError as exc:
            raise TransportError(f"connection read failed: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def encode_f32(data: np.ndarray) -> str:
    return base64.b64encode(np.asarray(data, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(text: str, count: int) -> np.ndarray:
    try:
        raw = base64.b64decode(text, validate=True)
    except (ValueError, TypeError) as exc:
        raise ProviderContractError(f"payload is not valid base64: {exc}") from exc
    if len(raw) != 4 * count:
        raise ProviderContractError(f"payload holds {len(raw) // 4} floats, expected {count}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


class ProviderClient:
    """One session against a score provider, over TCP or a spawned process.

    Endpoints: "tcp://host:port" (or bare "host:port"), or "exec:command"
    to spawn the provider and speak over its stdio.
    """

    def __init__(self, endpoint: str, sched: NoiseSchedule, timeout: float = 30.0):
        self.endpoint = endpoint
        self.digest = schedule_digest(sched)
        self.timeout = timeout
        self.conditions: tuple[str, ...] = ()
        self._next_id = 0
        self._pending: dict[int, dict] = {}
        self._sock: socket.socket | None = None
        self._proc: subprocess.Popen | None = None
        self._rd: BinaryIO
        self._wr: BinaryIO
        self._open()
        self._handshake()

    def _open(self) -> None:
        if self.endpoint.startswith("exec:"):
            cmd = shlex.split(self.endpoint[len("exec:"):])
            try:
                self._proc = subprocess.Popen(
                    cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE
                )
            except OSError as exc:
                raise TransportError(f"cannot spawn provider {cmd[0]!r}: {exc}") from exc
            assert self._proc.stdin is not None and self._proc.stdout is not None
            self._rd, self._wr = self._proc.stdout, self._proc.stdin
            return
        addr = self.endpoint
        if addr.startswith("tcp://"):
            addr = addr[len("tcp://"):]
        host, _, port = addr.rpartition(":")
        if not host or not port.isdigit():
            raise TransportError(f"malformed endpoint {self.endpoint!r}")
        try:
            self._sock = socket.create_connection((host, int(port)), timeout=self.timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach provider at {self.endpoint}: {exc}") from exc
        self._rd = self._sock.makefile("rb")
        self._wr = self._sock.makefile("wb")

    def _handshake(self) -> None:
        self._send({"type": "hello", "version": PROTOCOL_VERSION, "schedule_digest": self.digest})
        reply = read_frame(self._rd)
        if reply.get("type") == "error":
            raise HandshakeError(f"provider refused session: {reply.get('message')}")
        if reply.get("type") != "ready" or not isinstance(reply.get("conditions"), list):
            raise ProviderContractError(f"expected ready message, got {reply}")
        self.conditions = tuple(str(c) for c in reply["conditions"])

    def _send(self, message: dict) -> None:
        try:
            self._wr.write(encode_frame(message))
            self._wr.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise TransportError(f"connection write failed: {exc}") from exc

    def epsilon(self, y: LatentGrid, t: int, alpha_t: float, cond: str) -> LatentGrid:
        request_id = self._next_id
        self._next_id += 1
        self._send(
            {
                "type": "eps",
                "id": request_id,
                "t": int(t),
                "alpha_t": float(alpha_t),
                "cond": cond,
                "shape": list(y.shape),
                "data": encode_f32(y.data),
            }
        )
        reply = self._await(request_id)
        if reply.get("type") == "error":
            raise ScoreModelError(f"provider error for request {request_id}: {reply.get('message')}")
        if reply.get("type") != "eps_ok":
            raise ProviderContractError(f"unexpected reply type {reply.get('type')!r}")
        flat = decode_f32(reply.get("data", ""), y.data.size)
        if not np.all(np.isfinite(flat)):
            raise ProviderContractError("provider returned non-finite eps")
        return y.with_data(flat.reshape(y.shape))

    def _await(self, request_id: int) -> dict:
        if request_id in self._pending:
            return self._pending.pop(request_id)
        while True:
            reply = read_frame(self._rd)
            got = reply.get("id")
            if got == request_id:
                return reply
            if isinstance(got, int):
                self._pending[got] = reply
            else:
                raise ProviderContractError(f"reply without request id: {reply}")

    def close(self) -> None:
        for closer in (getattr(self._wr, "close", None), getattr(self._rd, "close", None)):
            try:
                if closer:
                    closer()
            except OSError:
                pass
        if self._sock is not None:
            self._sock.close()
        if self._proc is not None:
            self._proc.terminate()
            self._proc.wait(timeout=5)

    def __enter__(self) -> "ProviderClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class RemoteScoreModel:
    """ScoreModel served by a remote provider, bound to one condition."""

    def __init__(self, endpoint: str, sched: NoiseSchedule, cond: str, timeout: float = 30.0):
        self.sched = sched
        self.cond = cond
        self.client = ProviderClient(endpoint, sched, timeout=timeout)
        if cond not in self.client.conditions:
            raise HandshakeError(
                f"provider does not serve condition {cond!r} (has {list(self.client.conditions)})"
            )

    def epsilon(self, y: LatentGrid, t: int) -> LatentGrid:
        return self.client.epsilon(y, t, self.sched.alpha(t), self.cond)

    def close(self) -> None:
        self.client.close()


def remote_epsilon(
    endpoint: str, sched: NoiseSchedule, y: LatentGrid, t: int, cond: str
) -> LatentGrid:
    """One-shot remote eps request (connect, handshake, query, close)."""
    with ProviderClient(endpoint, sched) as client:
        return client.epsilon(y, t, sched.alpha(t), cond)
