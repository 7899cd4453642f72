"""Command-line interface.

Exit codes: 0 success, 2 configuration/usage error, 3 protocol failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import corpus, evaluate
from .entropy_filter import EdfConfig, evaluate_sample
from .losses import LossConfig, total_loss
from .manifest import manifest_path, split_dataset
from .mock_segmenter import MOCK_MODES, MockConfig, MockSegmenter
from .pixmap import MapIOError, read_map, write_map
from .prompting import DpcConfig, NoForegroundError, fuse, make_prompts
from .protocol import ProtocolError
from .selftrain import ConfigError, SelfTrainConfig, run_self_training

log = logging.getLogger("pseudolab")


def _config_section(path: str | None, section: str) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    else:
        raw = json.loads(path.read_text(encoding="utf-8"))
    value = raw.get(section, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: section {section!r} must be a table")
    return value


def _build(cls, raw: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _cmd_gen_corpus(args) -> int:
    records = corpus.generate_corpus(args.out, count=args.count, size=args.size, seed=args.seed)
    print(json.dumps({"count": len(records), "dir": str(args.out)}))
    return 0


def _cmd_split(args) -> int:
    records = corpus.corpus_records(args.images, args.gt)
    manifest = split_dataset(records, args.fraction, args.seed)
    out = Path(args.out)
    if out.is_dir():
        out = manifest_path(out, 0)
    manifest.save(out)
    print(json.dumps({"labeled": len(manifest.labeled), "unlabeled": len(manifest.unlabeled),
                      "manifest": str(out)}))
    return 0


def _cmd_edf(args) -> int:
    cfg = _build(EdfConfig, _config_section(args.config, "edf"), "edf")
    verdict = evaluate_sample(read_map(args.map), cfg)
    if args.out:
        write_map(verdict.weighted, args.out)
    print(json.dumps({
        "u_alpha": verdict.u_alpha,
        "retained": verdict.retained,
        "mean_local_entropy": verdict.mean_local_entropy,
    }))
    return 0


def _cmd_prompts(args) -> int:
    cfg = _build(DpcConfig, _config_section(args.config, "dpc"), "dpc")
    prompts = make_prompts(read_map(args.map), cfg)
    print(json.dumps(prompts.to_payload()))
    return 0


def _cmd_fuse(args) -> int:
    cfg = _build(DpcConfig, _config_section(args.config, "dpc"), "dpc")
    fused = fuse(read_map(args.first), read_map(args.second), cfg)
    write_map(fused, args.out)
    print(json.dumps({"out": str(args.out), "fusion": cfg.fusion}))
    return 0


def _cmd_loss(args) -> int:
    cfg = _build(LossConfig, _config_section(args.config, "loss"), "loss")
    report = total_loss(read_map(args.pred), read_map(args.target), cfg)
    print(json.dumps(report.to_dict()))
    return 0


def _cmd_eval(args) -> int:
    metrics = evaluate.evaluate_dirs(args.pred, args.gt)
    if not args.per_sample:
        metrics = {k: v for k, v in metrics.items() if k != "per_sample"}
    print(json.dumps(metrics))
    return 0


def _cmd_mock_segmenter(args) -> int:
    cfg = MockConfig(
        mode=args.mode,
        gt_dir=args.gt_dir,
        workdir=args.workdir,
        seed=args.seed,
        flip_rate=args.flip_rate,
        blur=args.blur,
    )
    server = MockSegmenter(cfg)
    if args.listen:
        host, port = args.listen.rsplit(":", 1)
        server.serve_tcp(host, int(port),
                         ready_callback=lambda p: print(f"listening on {host}:{p}", file=sys.stderr))
    else:
        server.serve_stdio()
    return 0


def _cmd_selftrain(args) -> int:
    config = SelfTrainConfig.from_file(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.cycles is not None:
        config = dataclasses.replace(config, max_cycles=args.cycles)
    final = run_self_training(config)
    print(json.dumps(final))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pseudolab")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic mask corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("split", help="split a corpus into labeled/unlabeled pools")
    p.add_argument("--images", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="manifest file or state directory")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("edf", help="screen one probability map")
    p.add_argument("--map", required=True)
    p.add_argument("--config")
    p.add_argument("--out", help="write the entropy-weighted map here")
    p.set_defaults(func=_cmd_edf)

    p = sub.add_parser("prompts", help="emit the prompt set for a weighted map")
    p.add_argument("--map", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_prompts)

    p = sub.add_parser("fuse", help="fuse two probability maps")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("loss", help="loss report for a prediction/target pair")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("eval", help="mean IoU/MAE of predictions vs ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--per-sample", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("mock-segmenter", help="serve oracle-backed mock predictions")
    p.add_argument("--mode", choices=MOCK_MODES, required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flip-rate", type=float, default=0.05)
    p.add_argument("--blur", type=float, default=2.0)
    p.add_argument("--listen", help="host:port for TCP instead of stdio")
    p.set_defaults(func=_cmd_mock_segmenter)

    p = sub.add_parser("selftrain", help="run the self-training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--cycles", type=int, help="override max cycles")
    p.set_defaults(func=_cmd_selftrain)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MapIOError, NoForegroundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol failure: {exc}", file=sys.stderr)
        return 3
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
