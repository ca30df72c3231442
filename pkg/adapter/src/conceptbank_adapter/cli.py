"""Adapter entry point.

    conceptbank-adapter serve --listen tcp:HOST:PORT --fixture f.json
    conceptbank-adapter serve --listen stdio --fixture f.json
    conceptbank-adapter serve --listen tcp:0.0.0.0:7447 --checkpoint my_pkg:load_model
    conceptbank-adapter selftest --fixture f.json

Conformance mode serves the synthetic world from a fixture file and needs
no model weights; checkpoint mode imports a user factory around a real
model. selftest validates the fixture by recomputation and exits 0/1.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .providers import ConformanceProvider, load_checkpoint_provider
from .server import TcpServer, serve_stdio


def _build_model(args):
    if bool(args.fixture) == bool(args.checkpoint):
        raise ValueError("exactly one of --fixture / --checkpoint is required")
    if args.fixture:
        return ConformanceProvider(args.fixture).model
    return load_checkpoint_provider(args.checkpoint, args.union_policy)


def cmd_serve(args) -> int:
    if args.selftest:
        return cmd_selftest(args)
    model = _build_model(args)
    if args.listen == "stdio":
        logging.basicConfig(stream=sys.stderr, level=logging.INFO)
        serve_stdio(model)
        return 0
    if not args.listen.startswith("tcp:"):
        raise ValueError(f"--listen must be stdio or tcp:HOST:PORT, got {args.listen!r}")
    host, _, port = args.listen[len("tcp:"):].rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad tcp listen spec {args.listen!r}")
    logging.basicConfig(level=logging.INFO)
    server = TcpServer(model, host, int(port))
    print(f"listening on {server.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def cmd_selftest(args) -> int:
    if not args.fixture:
        raise ValueError("selftest needs --fixture")
    provider = ConformanceProvider(args.fixture)
    problems = provider.run_selftest()
    if problems:
        for p in problems:
            print(f"selftest FAIL: {p}", file=sys.stderr)
        return 1
    print(f"selftest OK: fixture serves d={provider.model.dimension}, "
          f"model {provider.model.model_id}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptbank-adapter", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("serve", "selftest"):
        p = sub.add_parser(name)
        p.add_argument("--fixture", help="conformance fixture JSON")
        p.add_argument("--checkpoint", help="module:attr factory for a real model")
        p.add_argument("--union-policy", choices=("union", "best"), default="union")
        if name == "serve":
            p.add_argument("--listen", default="stdio", help="stdio | tcp:HOST:PORT")
            p.add_argument("--selftest", action="store_true",
                           help="validate the fixture and exit instead of serving")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "serve":
            return cmd_serve(args)
        return cmd_selftest(args)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
