"""Command-line entry point. Exit codes: 0 ok, 2 bad config/startup."""

from __future__ import annotations

import argparse
import logging
import sys

from .backends import BackendError, load_backend
from .server import AdapterConfig, AdapterServer


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="samserve")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("serve", help="serve the promptable-segmenter protocol")
    p.add_argument("--backend", choices=["sam", "stub"], default="stub")
    p.add_argument("--model-variant", default="vit_h")
    p.add_argument("--checkpoint", default="", help="model weights file (sam backend)")
    p.add_argument("--device", default="cpu")
    p.add_argument("--workdir", required=True, help="where response masks are written")
    p.add_argument("--listen", default="stdio", help="'stdio' or 'tcp:PORT'")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s samserve: %(message)s")
    try:
        config = AdapterConfig(
            backend=args.backend,
            model_variant=args.model_variant,
            checkpoint=args.checkpoint,
            device=args.device,
            listen=args.listen,
            workdir=args.workdir,
        )
        backend = load_backend(
            config.backend,
            checkpoint=config.checkpoint,
            model_variant=config.model_variant,
            device=config.device,
        )
    except (BackendError, ValueError) as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 2
    AdapterServer(config, backend).serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())
