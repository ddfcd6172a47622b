"""Command-line entry point.

    score-server --gmm-config cfg.toml --port 9000
    score-server --gmm-config cfg.toml --stdio
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_provider_config
from .server import TcpServer, serve_stdio


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="score-server", description="Analytic score provider")
    parser.add_argument("--gmm-config", required=True, help="TOML file with schedule and conditions")
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--port", type=int, help="listen on this TCP port (0 picks one)")
    mode.add_argument("--stdio", action="store_true", help="serve one session over stdio")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--quiet", action="store_true", help="suppress per-request logging")
    args = parser.parse_args(argv)

    # Request logs go to stderr; stdout may be the protocol channel.
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        registry, digest = load_provider_config(args.gmm_config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.stdio:
        serve_stdio(registry, digest)
        return 0
    server = TcpServer(registry, digest, host=args.host, port=args.port)
    print(f"listening on {args.host}:{server.port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
