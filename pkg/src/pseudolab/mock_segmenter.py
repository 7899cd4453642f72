"""Oracle-backed mock segmenters for self-contained runs.

Two modes, one per protocol role:

  oracle_noisy (plain role) returns the ground-truth mask corrupted by a
  Gaussian boundary blur and seed-deterministic pixel flips, standing in
  for an immature segmentation network.

  oracle_prompt_refine (promptable role) returns the ground truth
  restricted to the prompt box, with connected components that contain no
  prompt point suppressed, standing in for a promptable segmenter that
  obeys its prompts.

Corruption is keyed by (seed, sample id), so a sample's prediction is
stable across cycles and across runs.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import protocol
from .pixmap import ProbMap, read_mask, write_map

MOCK_MODES = ("oracle_noisy", "oracle_prompt_refine")


@dataclass(frozen=True)
class MockConfig:
    mode: str
    gt_dir: str
    workdir: str
    seed: int = 0
    flip_rate: float = 0.05
    blur: float = 2.0

    def __post_init__(self):
        if self.mode not in MOCK_MODES:
            raise ValueError(f"mode must be one of {MOCK_MODES}, got {self.mode!r}")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ValueError(f"flip_rate must lie in [0, 1], got {self.flip_rate}")
        if self.blur < 0.0:
            raise ValueError(f"blur must be >= 0, got {self.blur}")

    @property
    def role(self) -> str:
        return "plain" if self.mode == "oracle_noisy" else "promptable"


def _rng_for(seed: int, sample_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def noisy_prediction(gt: np.ndarray, sample_id: str, seed: int, flip_rate: float, blur: float) -> np.ndarray:
    """Flip a pixel budget of the mask as contiguous patches, then blur.

    An immature network hallucinates and misses coherent regions, so the
    flipped pixels (flip_rate of the image in expectation, varied per
    sample) come as random discs XORed into the binary mask before the
    boundary blur smooths everything. Salt-and-pepper noise would instead
    flood the map with local entropy no real prediction exhibits.
    """
    values = gt.astype(np.float64)
    height, width = values.shape
    if flip_rate > 0.0:
        rng = _rng_for(seed, sample_id)
        budget = flip_rate * rng.uniform(0.6, 1.4) * values.size
        flipped = 0
        ys, xs = np.mgrid[0:height, 0:width]
        while flipped < budget:
            cx = rng.uniform(0, width)
            cy = rng.uniform(0, height)
            radius = rng.uniform(9.0, 13.0)
            disc = np.hypot(xs - cx, ys - cy) <= radius
            values[disc] = 1.0 - values[disc]
            flipped += int(disc.sum())
    if blur > 0.0:
        values = np.clip(ndimage.gaussian_filter(values, sigma=blur), 0.0, 1.0)
    return values


def prompt_refined(gt: np.ndarray, prompts: dict) -> np.ndarray:
    """Ground truth clipped to the prompt box; point-less components dropped.

    When points are given but none lands on a component, a box prompt
    still anchors the segmentation (the box restriction alone applies);
    point-only prompts that all miss return an empty mask.
    """
    out = gt.astype(np.float64)
    box = prompts.get("box")
    if box is not None:
        x0, y0, x1, y1 = (int(v) for v in box)
        keep = np.zeros_like(out)
        keep[max(y0, 0) : y1 + 1, max(x0, 0) : x1 + 1] = 1.0
        out = out * keep
    points = prompts.get("points") or []
    if points:
        structure = ndimage.generate_binary_structure(2, 2)
        labels, _ = ndimage.label(out > 0.0, structure=structure)
        hit = set()
        for x, y in points:
            x, y = int(x), int(y)
            if 0 <= y < labels.shape[0] and 0 <= x < labels.shape[1] and labels[y, x] > 0:
                hit.add(int(labels[y, x]))
        if hit or box is None:
            out = out * np.isin(labels, sorted(hit))
    return out


class MockSegmenter:
    """Protocol handler serving oracle-derived masks for a corpus."""

    def __init__(self, cfg: MockConfig):
        self.cfg = cfg
        self.gt_dir = Path(cfg.gt_dir)
        self.workdir = Path(cfg.workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)

    def _ground_truth(self, image_path: str) -> np.ndarray:
        sample_id = Path(image_path).stem
        gt_path = self.gt_dir / f"{sample_id}.png"
        if not sample_id or not gt_path.is_file():
            raise FileNotFoundError(f"unknown image id {sample_id!r}")
        return read_mask(gt_path).data

    def handle(self, request: dict) -> dict:
        rid = request.get("request_id")
        image_path = request.get("image_path", "")
        try:
            gt = self._ground_truth(image_path)
        except FileNotFoundError as exc:
            return protocol.error_response(rid, str(exc))
        if self.cfg.mode == "oracle_noisy":
            values = noisy_prediction(
                gt, Path(image_path).stem, self.cfg.seed, self.cfg.flip_rate, self.cfg.blur
            )
        else:
            prompts = request.get("prompts")
            if not prompts:
                return protocol.error_response(rid, "promptable role requires prompts")
            values = prompt_refined(gt, prompts)
        mask_path = self.workdir / f"{rid}.pfm"
        write_map(ProbMap(values), mask_path)
        return protocol.ok_response(rid, str(mask_path))

    def serve_stdio(self) -> None:
        protocol.serve_ndjson(self.handle, sys.stdin.buffer, sys.stdout.buffer)

    def serve_tcp(self, host: str, port: int, ready_callback=None) -> None:
        protocol.serve_tcp(self.handle, host, port, ready_callback=ready_callback)
