"""Transports: threaded TCP listener and stdio single-session mode."""

from __future__ import annotations

import logging
import socket
import sys
import threading

from .session import Registry, Session

log = logging.getLogger("scoreserver")


class TcpServer:
    """One thread per client connection; sessions are independent."""

    def __init__(self, registry: Registry, digest: str, host: str = "127.0.0.1", port: int = 0):
        self.registry = registry
        self.digest = digest
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind((host, port))
        self.sock.listen(16)
        self.port = self.sock.getsockname()[1]
        self._accept_thread: threading.Thread | None = None

    def serve_forever(self) -> None:
        log.info("listening on %s:%d, conditions: %s", *self.sock.getsockname(), self.registry.conditions)
        while True:
            try:
                conn, addr = self.sock.accept()
            except OSError:
                return  # listener closed
            thread = threading.Thread(target=self._client, args=(conn, addr), daemon=True)
            thread.start()

    def start_background(self) -> None:
        self._accept_thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._accept_thread.start()

    def _client(self, conn: socket.socket, addr) -> None:
        peer = f"{addr[0]}:{addr[1]}"
        log.info("%s: connected", peer)
        rd = conn.makefile("rb")
        wr = conn.makefile("wb")
        try:
            Session(self.registry, self.digest, peer).run(rd, wr)
        finally:
            # Close the stream wrappers too: the fd stays open (and the peer
            # sees no EOF) until every makefile handle is released.
            for closer in (wr.close, rd.close, conn.close):
                try:
                    closer()
                except OSError:
                    pass
            log.info("%s: closed", peer)

    def close(self) -> None:
        self.sock.close()


def serve_stdio(registry: Registry, digest: str) -> None:
    """Single session over this process's stdin/stdout."""
    Session(registry, digest, "stdio").run(sys.stdin.buffer, sys.stdout.buffer)
