"""Dataset bookkeeping for the self-training loop.

A manifest tracks which samples currently count as labeled (ground truth
or accepted pseudo-labels) and which remain unlabeled. Samples only ever
move from the unlabeled pool to the labeled pool; the union of ids is
constant across cycles.

Manifests persist as JSON lines, one sample record per line, UTF-8. The
cycle number is carried in the file name (manifest_cycle_NNNN.jsonl) so
a state directory can be resumed from its newest manifest. Label paths
are stored relative to the manifest's directory; image paths are stored
as given.
"""

from __future__ import annotations

import json
import math
import os
import random
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

LABEL_KINDS = ("ground_truth", "pseudo")
PROVENANCES = ("initial", "edf_dpc")

_MANIFEST_RE = re.compile(r"manifest_cycle_(\d+)\.jsonl$")


@dataclass(frozen=True)
class SampleRecord:
    """One sample with its current label status and provenance.

    label_kind/label_path are None while the sample sits in the unlabeled
    pool. Pseudo-labeled records carry the mean local entropy that ranked
    them; ground-truth records always belong to cycle 0.
    """

    id: str
    image_path: str
    label_path: str | None = None
    label_kind: str | None = None
    cycle_added: int = 0
    provenance: str = "initial"
    mean_local_entropy: float | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("sample id must be nonempty")
        if self.label_kind is not None and self.label_kind not in LABEL_KINDS:
            raise ValueError(f"label_kind must be one of {LABEL_KINDS}, got {self.label_kind!r}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")
        if (self.label_kind is None) != (self.label_path is None):
            raise ValueError(f"sample {self.id}: label_kind and label_path must be set together")
        if self.label_kind == "ground_truth" and self.cycle_added != 0:
            raise ValueError(f"sample {self.id}: ground-truth labels belong to cycle 0")
        if self.label_kind == "pseudo" and self.mean_local_entropy is None:
            raise ValueError(f"sample {self.id}: pseudo labels must carry mean_local_entropy")

    def to_json_dict(self, pool: str) -> dict:
        out = {
            "id": self.id,
            "pool": pool,
            "image_path": self.image_path,
            "label_path": self.label_path,
            "label_kind": self.label_kind,
            "cycle_added": self.cycle_added,
            "provenance": self.provenance,
        }
        if self.mean_local_entropy is not None:
            out["mean_local_entropy"] = self.mean_local_entropy
        return out

    @classmethod
    def from_json_dict(cls, row: dict) -> tuple["SampleRecord", str]:
        pool = row.get("pool")
        if pool not in ("labeled", "unlabeled"):
            raise ValueError(f"sample row needs pool labeled/unlabeled, got {pool!r}")
        record = cls(
            id=row["id"],
            image_path=row["image_path"],
            label_path=row.get("label_path"),
            label_kind=row.get("label_kind"),
            cycle_added=int(row.get("cycle_added", 0)),
            provenance=row.get("provenance", "initial"),
            mean_local_entropy=row.get("mean_local_entropy"),
        )
        return record, pool


@dataclass
class Manifest:
    """Labeled/unlabeled pools plus the cycle that produced them."""

    labeled: list[SampleRecord] = field(default_factory=list)
    unlabeled: list[SampleRecord] = field(default_factory=list)
    cycle: int = 0

    def __post_init__(self):
        ids = [r.id for r in self.labeled] + [r.id for r in self.unlabeled]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate sample ids across manifest pools")

    @property
    def ids(self) -> set[str]:
        return {r.id for r in self.labeled} | {r.id for r in self.unlabeled}

    def initial_unlabeled_count(self) -> int:
        """Size of the unlabeled pool before any expansion happened."""
        initially_labeled = sum(
            1 for r in self.labeled if r.cycle_added == 0 and r.provenance == "initial"
        )
        return len(self.labeled) + len(self.unlabeled) - initially_labeled

    def save(self, path) -> None:
        path = Path(path)
        lines = []
        for record in self.labeled:
            lines.append(json.dumps(record.to_json_dict("labeled"), sort_keys=False))
        for record in self.unlabeled:
            lines.append(json.dumps(record.to_json_dict("unlabeled"), sort_keys=False))
        payload = ("\n".join(lines) + "\n").encode("utf-8")
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(payload)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path, cycle: int | None = None) -> "Manifest":
        path = Path(path)
        if cycle is None:
            match = _MANIFEST_RE.search(path.name)
            if not match:
                raise ValueError(f"cannot infer cycle from {path.name!r}; pass cycle explicitly")
            cycle = int(match.group(1))
        labeled, unlabeled = [], []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record, pool = SampleRecord.from_json_dict(json.loads(line))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest line: {exc}") from exc
            (labeled if pool == "labeled" else unlabeled).append(record)
        return cls(labeled=labeled, unlabeled=unlabeled, cycle=cycle)


def manifest_path(state_dir, cycle: int) -> Path:
    return Path(state_dir) / f"manifest_cycle_{cycle:04d}.jsonl"


def latest_manifest(state_dir) -> Path | None:
    """Newest manifest file in a state directory, by cycle number."""
    best, best_cycle = None, -1
    for entry in Path(state_dir).glob("manifest_cycle_*.jsonl"):
        match = _MANIFEST_RE.search(entry.name)
        if match and int(match.group(1)) > best_cycle:
            best, best_cycle = entry, int(match.group(1))
    return best


def split_dataset(records: list[tuple[str, str, str]], labeled_fraction: float, seed: int) -> Manifest:
    """Seed-deterministic uniform split into labeled and unlabeled pools.

    records holds (id, image_path, gt_label_path) triples. The labeled
    count is round(fraction * total), at least 1.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must lie in (0, 1], got {labeled_fraction}")
    ordered = sorted(records, key=lambda r: r[0])
    ids = [r[0] for r in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids in records")
    random.Random(seed).shuffle(ordered)
    count = max(1, int(math.floor(labeled_fraction * len(ordered) + 0.5)))
    labeled = [
        SampleRecord(id=sid, image_path=img, label_path=gt, label_kind="ground_truth")
        for sid, img, gt in sorted(ordered[:count])
    ]
    unlabeled = [
        SampleRecord(id=sid, image_path=img)
        for sid, img, _ in sorted(ordered[count:])
    ]
    return Manifest(labeled=labeled, unlabeled=unlabeled, cycle=0)


def move_to_labeled(
    manifest: Manifest,
    promotions: dict[str, tuple[str, float]],
    cycle: int,
) -> Manifest:
    """Promote unlabeled samples given {id: (label_path, mean_local_entropy)}."""
    unknown = set(promotions) - {r.id for r in manifest.unlabeled}
    if unknown:
        raise ValueError(f"cannot promote ids not in the unlabeled pool: {sorted(unknown)}")
    moved = []
    remaining = []
    for record in manifest.unlabeled:
        if record.id in promotions:
            label_path, entropy = promotions[record.id]
            moved.append(
                replace(
                    record,
                    label_path=label_path,
                    label_kind="pseudo",
                    cycle_added=cycle,
                    provenance="edf_dpc",
                    mean_local_entropy=entropy,
                )
            )
        else:
            remaining.append(record)
    return Manifest(labeled=manifest.labeled + moved, unlabeled=remaining, cycle=cycle)
