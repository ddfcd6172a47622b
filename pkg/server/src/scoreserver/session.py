"""Per-connection protocol logic, transport-agnostic.

A session answers one client: a hello (version + schedule digest) followed by
any number of eps requests. Requests are answered in arrival order here —
a valid special case of the protocol's out-of-order permission, since ids
disambiguate on the client side. Malformed messages that still carry an id
get an error response; unparseable frames close the connection; a backend
exception answers that request with an error and keeps the session alive.
"""

from __future__ import annotations

import logging
from typing import BinaryIO, Callable, Mapping

import numpy as np

from .framing import FrameError, decode_f32, encode_f32, read_frame, write_frame
from .gmm import Mixture

PROTOCOL_VERSION = 1

log = logging.getLogger("scoreserver")

# Backend hooks map (y, t, alpha_t, cond) -> eps, both flat float arrays.
BackendFn = Callable[[np.ndarray, int, float, str], np.ndarray]


class Registry:
    """Conditions this provider serves: native mixtures plus mounted backends."""

    def __init__(self, mixtures: Mapping[str, Mixture] | None = None):
        self.mixtures: dict[str, Mixture] = dict(mixtures or {})
        self.backends: dict[str, BackendFn] = {}

    def register_backend(self, cond: str, fn: BackendFn) -> None:
        self.backends[cond] = fn

    @property
    def conditions(self) -> list[str]:
        return sorted(set(self.mixtures) | set(self.backends))

    def epsilon(self, cond: str, y: np.ndarray, t: int, alpha_t: float) -> np.ndarray:
        backend = self.backends.get(cond)
        if backend is not None:
            return np.asarray(backend(y, t, alpha_t, cond), dtype=np.float64)
        return self.mixtures[cond].epsilon(y, alpha_t)


class Session:
    def __init__(self, registry: Registry, digest: str, peer: str = "?"):
        self.registry = registry
        self.digest = digest
        self.peer = peer

    def run(self, rd: BinaryIO, wr: BinaryIO) -> None:
        try:
            if not self._handshake(rd, wr):
                return
            while True:
                try:
                    message = read_frame(rd)
                except FrameError as exc:
                    log.warning("%s: closing on bad frame: %s", self.peer, str(exc))
                    return
                if message is None:
                    return
                write_frame(wr, self._answer(message))
        except (BrokenPipeError, ConnectionResetError, OSError):
            log.info("%s: connection dropped", self.peer)

    def _handshake(self, rd: BinaryIO, wr: BinaryIO) -> bool:
        try:
            hello = read_frame(rd)
        except FrameError as exc:
            log.warning("%s: bad hello frame: %s", self.peer, str(exc))
            return False
        if hello is None:
            return False
        if hello.get("type") != "hello":
            write_frame(wr, {"type": "error", "id": 0, "message": "expected hello"})
            return False
        if hello.get("version") != PROTOCOL_VERSION:
            write_frame(
                wr,
                {"type": "error", "id": 0, "message": f"unsupported version {hello.get('version')}"},
            )
            return False
        if hello.get("schedule_digest") != self.digest:
            log.warning("%s: schedule digest mismatch, refusing", self.peer)
            write_frame(wr, {"type": "error", "id": 0, "message": "schedule digest mismatch"})
            return False
        write_frame(wr, {"type": "ready", "conditions": self.registry.conditions})
        return True

    def _answer(self, message: dict) -> dict:
        rid = message.get("id")
        if not isinstance(rid, int):
            return {"type": "error", "id": 0, "message": "request without integer id"}
        error = self._validate(message)
        if error:
            log.info("%s: request %s rejected: %s", self.peer, rid, error)
            return {"type": "error", "id": rid, "message": error}
        cond = message["cond"]
        t = int(message["t"])
        alpha_t = float(message["alpha_t"])
        shape = tuple(int(d) for d in message["shape"])
        y = decode_f32(message["data"])
        try:
            eps = self.registry.epsilon(cond, y, t, alpha_t)
        except Exception as exc:  # backend faults must not kill the session
            log.warning("%s: request %s backend failure: %s", self.peer, rid, str(exc))
            return {"type": "error", "id": rid, "message": f"backend failure: {exc}"}
        eps = np.asarray(eps, dtype=np.float64).reshape(-1)
        if eps.size != y.size or not np.all(np.isfinite(eps)):
            log.warning("%s: request %s produced invalid eps", self.peer, rid)
            return {"type": "error", "id": rid, "message": "backend produced invalid eps"}
        log.info("%s: eps id=%d cond=%s t=%d shape=%s", self.peer, rid, cond, t, shape)
        return {"type": "eps_ok", "id": rid, "data": encode_f32(eps)}

    def _validate(self, message: dict) -> str | None:
        if message.get("type") != "eps":
            return f"unsupported message type {message.get('type')!r}"
        cond = message.get("cond")
        if not isinstance(cond, str) or cond not in self.registry.conditions:
            return f"unknown condition {cond!r}"
        if not isinstance(message.get("t"), int):
            return "t must be an integer"
        if not isinstance(message.get("alpha_t"), (int, float)):
            return "alpha_t must be a number"
        alpha_t = float(message["alpha_t"])
        if not 0.0 < alpha_t < 1.0:
            return f"alpha_t {alpha_t} outside (0, 1)"
        shape = message.get("shape")
        if not isinstance(shape, list) or not shape or not all(
            isinstance(d, int) and d > 0 for d in shape
        ):
            return "shape must be a list of positive integers"
        try:
            values = decode_f32(message.get("data", ""))
        except (FrameError, ValueError) as exc:
            return f"bad data payload: {exc}"
        expected = int(np.prod(shape))
        if values.size != expected:
            return f"payload holds {values.size} values, shape implies {expected}"
        if not np.all(np.isfinite(values)):
            return "payload contains non-finite values"
        return None
