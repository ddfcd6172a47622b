import math
import socket
import threading

import numpy as np
import pytest

from scoreserver.framing import decode_f32, encode_f32, read_frame, schedule_digest, write_frame
from scoreserver.gmm import Mixture
from scoreserver.session import Registry, Session

ALPHAS = [1.0, 0.75, 0.5, 0.25]
DIGEST = schedule_digest(ALPHAS)


def std_registry():
    return Registry({"std": Mixture([1.0], [0.0], [1.0])})


class Driver:
    """Runs a session over a socketpair and exposes client-side send/recv."""

    def __init__(self, registry, digest=DIGEST):
        client, server = socket.socketpair()
        self.client = client
        self._rd = client.makefile("rb")
        self._wr = client.makefile("wb")
        session = Session(registry, digest, "test")
        server_rd = server.makefile("rb")
        server_wr = server.makefile("wb")

        def run():
            try:
                session.run(server_rd, server_wr)
            finally:
                for closer in (server_wr.close, server_rd.close, server.close):
                    try:
                        closer()
                    except OSError:
                        pass

        self.thread = threading.Thread(target=run, daemon=True)
        self.thread.start()

    def send(self, message):
        write_frame(self._wr, message)

    def recv(self):
        return read_frame(self._rd)

    def hello(self, digest=DIGEST):
        self.send({"type": "hello", "version": 1, "schedule_digest": digest})
        return self.recv()

    def close(self):
        self.client.close()


def eps_request(rid, t, values, cond="std", shape=None, alpha=None):
    return {
        "type": "eps",
        "id": rid,
        "t": t,
        "alpha_t": ALPHAS[t] if alpha is None else alpha,
        "cond": cond,
        "shape": shape or [1, len(values)],
        "data": encode_f32(np.asarray(values)),
    }


class TestHandshake:
    def test_matching_digest_gets_ready(self):
        driver = Driver(std_registry())
        reply = driver.hello()
        assert reply == {"type": "ready", "conditions": ["std"]}
        driver.close()

    def test_digest_mismatch_refused(self):
        driver = Driver(std_registry())
        reply = driver.hello(digest="0" * 16)
        assert reply["type"] == "error"
        assert "digest" in reply["message"]
        assert driver.recv() is None  # connection closed
        driver.close()

    def test_wrong_version_refused(self):
        driver = Driver(std_registry())
        driver.send({"type": "hello", "version": 99, "schedule_digest": DIGEST})
        assert driver.recv()["type"] == "error"
        driver.close()


class TestEps:
    def test_standard_normal_closed_form(self):
        driver = Driver(std_registry())
        driver.hello()
        values = [0.5, -1.25, 2.0, 0.0]
        driver.send(eps_request(7, 2, values))
        reply = driver.recv()
        assert reply["type"] == "eps_ok" and reply["id"] == 7
        got = decode_f32(reply["data"])
        sent_f32 = np.asarray(values, dtype=np.float32).astype(np.float64)
        expected = math.sqrt(1.0 - ALPHAS[2]) * sent_f32
        assert np.max(np.abs(got - expected)) <= 1e-7
        driver.close()

    def test_multi_component_responsibilities(self):
        registry = Registry(
            {"mix": Mixture([0.5, 0.5], [-30.0, 30.0], [1.0, 1.0]), "lone": Mixture([1.0], [30.0], [1.0])}
        )
        driver = Driver(registry)
        driver.hello()
        y = [30.1, 29.9]
        driver.send(eps_request(0, 1, y, cond="mix", shape=[2]))
        both = decode_f32(driver.recv()["data"])
        driver.send(eps_request(1, 1, y, cond="lone", shape=[2]))
        lone = decode_f32(driver.recv()["data"])
        assert np.max(np.abs(both - lone)) <= 1e-6
        driver.close()

    def test_unknown_condition_rejected(self):
        driver = Driver(std_registry())
        driver.hello()
        driver.send(eps_request(3, 1, [0.0], cond="mystery"))
        reply = driver.recv()
        assert reply == {"type": "error", "id": 3, "message": "unknown condition 'mystery'"}
        driver.close()

    def test_shape_payload_mismatch_rejected_session_alive(self):
        driver = Driver(std_registry())
        driver.hello()
        driver.send(eps_request(4, 1, [0.0, 1.0], shape=[1, 3]))
        assert driver.recv()["type"] == "error"
        driver.send(eps_request(5, 1, [0.0, 1.0]))
        assert driver.recv()["type"] == "eps_ok"
        driver.close()

    def test_bad_alpha_rejected(self):
        driver = Driver(std_registry())
        driver.hello()
        driver.send(eps_request(6, 1, [0.0], alpha=1.5))
        assert driver.recv()["type"] == "error"
        driver.close()

    def test_unparseable_frame_closes_connection(self):
        driver = Driver(std_registry())
        driver.hello()
        driver._wr.write(b"\x00\x00\x00\x03not-json"[:7])
        driver._wr.flush()
        assert driver.recv() is None
        driver.close()


class TestBackendHooks:
    def test_zero_echo_hook(self):
        registry = std_registry()
        registry.register_backend("zeros", lambda y, t, a, c: np.zeros_like(y))
        driver = Driver(registry)
        ready = driver.hello()
        assert ready["conditions"] == ["std", "zeros"]
        driver.send(eps_request(1, 1, [3.0, -4.0], cond="zeros"))
        got = decode_f32(driver.recv()["data"])
        assert np.array_equal(got, [0.0, 0.0])
        driver.close()

    def test_raising_hook_answers_error_and_survives(self):
        registry = std_registry()

        def explode(y, t, a, c):
            raise RuntimeError("boom")

        registry.register_backend("broken", explode)
        driver = Driver(registry)
        driver.hello()
        for rid in range(3):
            driver.send(eps_request(rid, 1, [0.5], cond="broken"))
            reply = driver.recv()
            assert reply["type"] == "error" and reply["id"] == rid
        driver.send(eps_request(99, 1, [0.5]))
        assert driver.recv()["type"] == "eps_ok"
        driver.close()

    def test_wrong_shape_hook_result_rejected(self):
        registry = std_registry()
        registry.register_backend("short", lambda y, t, a, c: y[:-1])
        driver = Driver(registry)
        driver.hello()
        driver.send(eps_request(0, 1, [1.0, 2.0], cond="short"))
        assert driver.recv()["type"] == "error"
        driver.close()

    def test_hook_wrapping_mixture_matches_native_path(self):
        mixture = Mixture([0.3, 0.7], [-1.0, 2.0], [0.5, 1.5])
        registry = Registry({"native": mixture})
        registry.register_backend("hooked", lambda y, t, a, c: mixture.epsilon(y, a))
        driver = Driver(registry)
        driver.hello()
        rng = np.random.default_rng(0)
        for rid in range(10):
            y = rng.standard_normal(6)
            t = int(rng.integers(1, 4))
            driver.send(eps_request(2 * rid, t, y, cond="native", shape=[6]))
            native = decode_f32(driver.recv()["data"])
            driver.send(eps_request(2 * rid + 1, t, y, cond="hooked", shape=[6]))
            hooked = decode_f32(driver.recv()["data"])
            assert np.array_equal(native, hooked)
        driver.close()
