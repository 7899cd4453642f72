"""The self-training loop: predict, filter, prompt, correct, expand.

Each cycle asks the plain segmenter for an initial map per unlabeled
sample, screens and weights the maps by entropy, ranks the retained
samples, and promotes the scheduled number of winners: their weighted
maps become prompts for the promptable segmenter, whose answer is fused
into the corrected pseudo-label written under the state directory.
Cycles repeat until the unlabeled pool is empty or the cycle budget runs
out. All randomness is seeded and every artifact write is atomic, so a
killed run resumes from its newest manifest and reproduces the same
bytes.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shlex
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .entropy_filter import EdfConfig, EdfVerdict, evaluate_sample, rank_candidates
from .evaluate import iou
from .manifest import Manifest, latest_manifest, manifest_path, move_to_labeled, split_dataset
from .pixmap import MapIOError, ProbMap, read_map, read_mask, write_map
from .prompting import DpcConfig, NoForegroundError, fuse, make_prompts
from .protocol import ProtocolError, StdioSegmenterClient, TcpSegmenterClient

log = logging.getLogger(__name__)

POLICY_KINDS = ("one_shot", "equal_ratio", "epoch_dynamic")


class ConfigError(Exception):
    """The run configuration is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class ExpansionPolicy:
    """How many retained samples to promote per cycle, and in what order.

    epoch_dynamic promotes up to the current labeled-set size (the pool
    at most doubles per cycle); equal_ratio promotes a fixed fraction of
    the initial unlabeled pool; one_shot promotes everything that passes,
    once. cycle_epochs/total_epochs record the external trainer's cadence
    and bound the cycle count when max_cycles is not given.
    """

    kind: str = "epoch_dynamic"
    fraction: float = 0.2
    order: str = "low_to_high"
    seed: int | None = None
    cycle_epochs: int = 20
    total_epochs: int = 300

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"kind must be one of {POLICY_KINDS}, got {self.kind!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.order not in ("low_to_high", "high_to_low", "random"):
            raise ValueError(f"bad order {self.order!r}")
        if self.order == "random" and self.seed is None:
            raise ValueError("random order requires a seed")
        if self.cycle_epochs < 1 or self.total_epochs < self.cycle_epochs:
            raise ValueError("need cycle_epochs >= 1 and total_epochs >= cycle_epochs")

    @property
    def default_max_cycles(self) -> int:
        return self.total_epochs // self.cycle_epochs


def expansion_count(
    policy: ExpansionPolicy,
    cycle: int,
    current_labeled: int,
    passing: int,
    initial_unlabeled: int,
) -> int:
    """Number of retained samples to promote this cycle."""
    if min(cycle, current_labeled, passing, initial_unlabeled) < 0:
        raise ValueError("counts must be >= 0")
    if policy.kind == "one_shot":
        return passing if cycle == 1 else 0
    if policy.kind == "equal_ratio":
        return min(math.ceil(policy.fraction * initial_unlabeled), passing)
    return min(current_labeled, passing)


@dataclass(frozen=True)
class SegmenterSpec:
    """How to reach one segmenter role.

    transport "stdio" spawns `command`; "tcp" connects to `address`;
    "builtin-mock" spawns the bundled mock segmenter on the given
    ground-truth directory.
    """

    transport: str
    command: tuple[str, ...] = ()
    address: str = ""
    mode: str = ""
    gt_dir: str = ""
    seed: int = 0
    flip_rate: float = 0.05
    blur: float = 2.0

    def __post_init__(self):
        if self.transport not in ("stdio", "tcp", "builtin-mock"):
            raise ValueError(f"bad transport {self.transport!r}")
        if self.transport == "stdio" and not self.command:
            raise ValueError("stdio transport requires a command")
        if self.transport == "tcp" and ":" not in self.address:
            raise ValueError("tcp transport requires address host:port")
        if self.transport == "builtin-mock" and (not self.mode or not self.gt_dir):
            raise ValueError("builtin-mock requires mode and gt_dir")

    @classmethod
    def from_dict(cls, raw: dict, where: str) -> "SegmenterSpec":
        known = {"transport", "command", "address", "mode", "gt_dir", "seed", "flip_rate", "blur"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        try:
            return cls(
                transport=raw.get("transport", ""),
                command=tuple(raw.get("command", ())),
                address=raw.get("address", ""),
                mode=raw.get("mode", ""),
                gt_dir=raw.get("gt_dir", ""),
                seed=int(raw.get("seed", 0)),
                flip_rate=float(raw.get("flip_rate", 0.05)),
                blur=float(raw.get("blur", 2.0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc

    def spawn(self, name: str, scratch_dir: Path):
        if self.transport == "tcp":
            host, port = self.address.rsplit(":", 1)
            return TcpSegmenterClient(host, int(port), name=name)
        if self.transport == "stdio":
            return StdioSegmenterClient(list(self.command), name=name)
        command = [
            sys.executable,
            "-m",
            "pseudolab.cli",
            "mock-segmenter",
            "--mode",
            self.mode,
            "--gt-dir",
            self.gt_dir,
            "--workdir",
            str(scratch_dir),
            "--seed",
            str(self.seed),
            "--flip-rate",
            str(self.flip_rate),
            "--blur",
            str(self.blur),
        ]
        return StdioSegmenterClient(command, name=name)


def _dataclass_from_dict(cls, raw: dict, where: str):
    field_names = {f for f in cls.__dataclass_fields__}
    unknown = set(raw) - field_names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class SelfTrainConfig:
    state_dir: str
    images_dir: str
    gt_dir: str
    plain: SegmenterSpec
    promptable: SegmenterSpec
    labeled_fraction: float = 0.1
    seed: int = 0
    max_cycles: int | None = None
    in_flight: int = 4
    request_timeout: float = 60.0
    cycle_hook: tuple[str, ...] = ()
    edf: EdfConfig = field(default_factory=EdfConfig)
    dpc: DpcConfig = field(default_factory=DpcConfig)
    policy: ExpansionPolicy = field(default_factory=ExpansionPolicy)

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError(f"labeled_fraction must lie in (0, 1], got {self.labeled_fraction}")
        if self.in_flight < 1:
            raise ValueError(f"in_flight must be >= 1, got {self.in_flight}")

    @classmethod
    def from_dict(cls, raw: dict) -> "SelfTrainConfig":
        raw = dict(raw)
        for key in ("state_dir", "images_dir", "gt_dir"):
            if key not in raw:
                raise ConfigError(f"config requires {key!r}")
        for role in ("plain", "promptable"):
            if role not in raw or not isinstance(raw[role], dict):
                raise ConfigError(f"config requires a {role!r} segmenter table")
            raw[role] = SegmenterSpec.from_dict(raw[role], role)
        if "edf" in raw:
            raw["edf"] = _dataclass_from_dict(EdfConfig, raw["edf"], "edf")
        if "dpc" in raw:
            raw["dpc"] = _dataclass_from_dict(DpcConfig, raw["dpc"], "dpc")
        if "policy" in raw:
            raw["policy"] = _dataclass_from_dict(ExpansionPolicy, raw["policy"], "policy")
        if "cycle_hook" in raw:
            hook = raw["cycle_hook"]
            raw["cycle_hook"] = tuple(shlex.split(hook)) if isinstance(hook, str) else tuple(hook)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "SelfTrainConfig":
        path = Path(path)
        try:
            text = path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            try:
                raw = tomllib.loads(text.decode("utf-8"))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: bad TOML: {exc}") from exc
        else:
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: bad JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a table/object")
        return cls.from_dict(raw)


@dataclass
class CycleReport:
    """Everything that happened to the unlabeled pool in one cycle."""

    cycle: int
    unlabeled_before: int
    predicted: int = 0
    retained: int = 0
    selected: int = 0
    expanded: int = 0
    mean_u_alpha: float | None = None
    mean_iou_initial: float | None = None
    mean_iou_corrected: float | None = None
    skipped: list[dict] = field(default_factory=list)
    samples: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "unlabeled_before": self.unlabeled_before,
            "predicted": self.predicted,
            "retained": self.retained,
            "selected": self.selected,
            "expanded": self.expanded,
            "mean_u_alpha": self.mean_u_alpha,
            "mean_iou_initial": self.mean_iou_initial,
            "mean_iou_corrected": self.mean_iou_corrected,
            "skipped": self.skipped,
            "samples": self.samples,
        }


def _image_size(path: str) -> tuple[int, int]:
    with Image.open(path) as img:
        return (img.height, img.width)


def _fetch_initial(client, record, edf_cfg, timeout):
    """Request the plain prediction for one sample and screen it."""
    response = client.request(record.image_path, timeout=timeout)
    if response.get("status") != "ok":
        raise ProtocolError(f"plain segmenter error: {response.get('message', 'unspecified')}")
    initial = read_map(response["mask_path"])
    height, width = _image_size(record.image_path)
    if (initial.height, initial.width) != (height, width):
        raise ProtocolError(
            f"mask dimensions {(initial.height, initial.width)} != image dimensions {(height, width)}"
        )
    return initial, evaluate_sample(initial, edf_cfg)


def _correct_sample(record, verdict, prompt_client, dpc_cfg, timeout):
    """Prompt the promptable segmenter and fuse its answer."""
    prompts = make_prompts(verdict.weighted, dpc_cfg)
    response = prompt_client.request(record.image_path, prompts.to_payload(), timeout=timeout)
    if response.get("status") != "ok":
        raise ProtocolError(f"promptable segmenter error: {response.get('message', 'unspecified')}")
    refined = read_map(response["mask_path"])
    return fuse(verdict.weighted, refined, dpc_cfg)


def run_cycle(
    manifest: Manifest,
    plain_client,
    prompt_client,
    edf_cfg: EdfConfig,
    dpc_cfg: DpcConfig,
    policy: ExpansionPolicy,
    *,
    state_dir,
    gt_dir=None,
    in_flight: int = 1,
    timeout: float = 60.0,
) -> tuple[Manifest, CycleReport]:
    """One expansion cycle; returns the advanced manifest and its report.

    Samples that fail (segmenter errors, bad masks, no foreground) are
    recorded as skipped and stay unlabeled for the next cycle; nothing is
    dropped silently.
    """
    state_dir = Path(state_dir)
    labels_dir = state_dir / "labels"
    labels_dir.mkdir(parents=True, exist_ok=True)
    cycle = manifest.cycle + 1
    report = CycleReport(cycle=cycle, unlabeled_before=len(manifest.unlabeled))
    if not manifest.unlabeled:
        return Manifest(manifest.labeled, manifest.unlabeled, cycle), report

    records = sorted(manifest.unlabeled, key=lambda r: r.id)

    initial_maps: dict[str, ProbMap] = {}
    verdicts: dict[str, EdfVerdict] = {}
    failures: dict[str, str] = {}
    with ThreadPoolExecutor(max_workers=in_flight) as pool:
        futures = {
            record.id: pool.submit(_fetch_initial, plain_client, record, edf_cfg, timeout)
            for record in records
        }
        for record in records:
            try:
                initial_maps[record.id], verdicts[record.id] = futures[record.id].result()
            except (ProtocolError, MapIOError, ValueError) as exc:
                failures[record.id] = str(exc)

    report.predicted = len(verdicts)
    if verdicts:
        report.mean_u_alpha = float(np.mean([v.u_alpha for v in verdicts.values()]))

    retained = [(sid, v) for sid, v in sorted(verdicts.items()) if v.retained]
    report.retained = len(retained)
    ranked = rank_candidates(retained, order=policy.order, seed=policy.seed)
    count = expansion_count(
        policy, cycle, len(manifest.labeled), len(ranked), manifest.initial_unlabeled_count()
    )
    selected = ranked[:count]
    report.selected = len(selected)

    by_id = {record.id: record for record in records}
    corrected: dict[str, ProbMap] = {}
    with ThreadPoolExecutor(max_workers=in_flight) as pool:
        futures = {
            sid: pool.submit(_correct_sample, by_id[sid], verdicts[sid], prompt_client, dpc_cfg, timeout)
            for sid in selected
        }
        for sid in selected:
            try:
                corrected[sid] = futures[sid].result()
            except NoForegroundError:
                failures[sid] = "no_foreground"
            except (ProtocolError, MapIOError, ValueError) as exc:
                failures[sid] = str(exc)

    promotions = {}
    for sid in selected:
        if sid not in corrected:
            continue
        label_file = labels_dir / f"{sid}.pfm"
        write_map(corrected[sid], label_file)
        promotions[sid] = (f"labels/{sid}.pfm", verdicts[sid].mean_local_entropy)
    report.expanded = len(promotions)

    if gt_dir is not None and promotions:
        gt_dir = Path(gt_dir)
        initial_ious, corrected_ious = [], []
        for sid in sorted(promotions):
            gt = ProbMap(read_mask(gt_dir / f"{sid}.png").data.astype(float))
            initial_ious.append(iou(initial_maps[sid], gt))
            corrected_ious.append(iou(corrected[sid], gt))
        report.mean_iou_initial = float(np.mean(initial_ious))
        report.mean_iou_corrected = float(np.mean(corrected_ious))

    selected_set = set(selected)
    for record in records:
        entry = {"id": record.id}
        if record.id in verdicts:
            verdict = verdicts[record.id]
            entry.update(
                u_alpha=verdict.u_alpha,
                mean_local_entropy=verdict.mean_local_entropy,
                retained=verdict.retained,
                selected=record.id in selected_set,
                expanded=record.id in promotions,
            )
        if record.id in failures:
            entry["skip_reason"] = failures[record.id]
            report.skipped.append({"id": record.id, "reason": failures[record.id]})
        report.samples.append(entry)

    return move_to_labeled(manifest, promotions, cycle), report


def _run_cycle_hook(hook: tuple[str, ...], cycle: int, manifest_file: Path) -> None:
    env = dict(os.environ, PSEUDOLAB_CYCLE=str(cycle), PSEUDOLAB_MANIFEST=str(manifest_file))
    result = subprocess.run(list(hook), env=env)
    if result.returncode != 0:
        raise RuntimeError(f"cycle hook {hook!r} exited with {result.returncode}")


def run_self_training(config: SelfTrainConfig) -> dict:
    """Run cycles until the unlabeled pool empties or the budget runs out.

    Resumes from the newest manifest in the state directory when one
    exists; otherwise splits the corpus at the configured fraction.
    Returns the final report (also written to the state directory).
    """
    state_dir = Path(config.state_dir)
    state_dir.mkdir(parents=True, exist_ok=True)
    (state_dir / "reports").mkdir(exist_ok=True)

    existing = latest_manifest(state_dir)
    if existing is not None:
        manifest = Manifest.load(existing)
        log.info("resuming from %s (cycle %d)", existing.name, manifest.cycle)
    else:
        from .corpus import corpus_records

        records = corpus_records(config.images_dir, config.gt_dir)
        manifest = split_dataset(records, config.labeled_fraction, config.seed)
        manifest.save(manifest_path(state_dir, 0))
        log.info(
            "split %d samples into %d labeled / %d unlabeled",
            len(records), len(manifest.labeled), len(manifest.unlabeled),
        )

    scratch = state_dir / "scratch"
    plain_client = config.plain.spawn("plain", scratch / "plain")
    try:
        prompt_client = config.promptable.spawn("promptable", scratch / "promptable")
    except ProtocolError:
        plain_client.close()
        raise
    max_cycles = config.max_cycles if config.max_cycles is not None else config.policy.default_max_cycles

    cycles = []
    try:
        plain_client.probe(timeout=config.request_timeout)
        prompt_client.probe(timeout=config.request_timeout)
        while manifest.unlabeled and manifest.cycle < max_cycles:
            manifest, report = run_cycle(
                manifest,
                plain_client,
                prompt_client,
                config.edf,
                config.dpc,
                config.policy,
                state_dir=state_dir,
                gt_dir=config.gt_dir,
                in_flight=config.in_flight,
                timeout=config.request_timeout,
            )
            mpath = manifest_path(state_dir, manifest.cycle)
            manifest.save(mpath)
            report_file = state_dir / "reports" / f"cycle_{manifest.cycle:04d}.json"
            tmp = report_file.with_name(report_file.name + ".tmp")
            tmp.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
            os.replace(tmp, report_file)
            log.info(
                "cycle %d: %d predicted, %d retained, %d expanded, %d unlabeled left",
                report.cycle, report.predicted, report.retained, report.expanded,
                len(manifest.unlabeled),
            )
            cycles.append(report.to_dict())
            if config.cycle_hook:
                _run_cycle_hook(config.cycle_hook, manifest.cycle, mpath)
    finally:
        plain_client.close()
        prompt_client.close()

    final = {
        "cycles_run": manifest.cycle,
        "labeled": len(manifest.labeled),
        "unlabeled": len(manifest.unlabeled),
        "terminated": "unlabeled_empty" if not manifest.unlabeled else "max_cycles",
        "cycles": [
            {k: c[k] for k in ("cycle", "predicted", "retained", "selected", "expanded",
                               "mean_u_alpha", "mean_iou_initial", "mean_iou_corrected")}
            for c in cycles
        ],
    }
    tmp = state_dir / "final_report.json.tmp"
    tmp.write_text(json.dumps(final, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, state_dir / "final_report.json")
    return final
