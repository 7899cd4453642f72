"""Desk-scale evaluation: mean IoU and MAE between predictions and ground truth.

IoU binarizes both sides at 0.5 (strict greater-than); MAE compares the
soft values. Directory evaluation matches files by stem and accepts PFM
or PNG on either side.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .pixmap import ProbMap, read_map


def iou(pred: ProbMap, gt: ProbMap, threshold: float = 0.5) -> float:
    """Intersection over union of the thresholded maps; 1.0 when both are empty."""
    if pred.data.shape != gt.data.shape:
        raise ValueError(f"dimension mismatch: {pred.data.shape} vs {gt.data.shape}")
    a = pred.data > threshold
    b = gt.data > threshold
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def mae(pred: ProbMap, gt: ProbMap) -> float:
    """Mean absolute difference of the soft values."""
    if pred.data.shape != gt.data.shape:
        raise ValueError(f"dimension mismatch: {pred.data.shape} vs {gt.data.shape}")
    return float(np.abs(pred.data - gt.data).mean())


def _find_map(directory: Path, stem: str) -> Path | None:
    for suffix in (".pfm", ".png"):
        candidate = directory / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def evaluate_dirs(pred_dir, gt_dir) -> dict:
    """Mean IoU/MAE over every prediction in pred_dir.

    Every prediction stem must have a ground-truth file; extra ground
    truth is ignored so partial prediction sets can be scored.
    """
    pred_dir = Path(pred_dir)
    gt_dir = Path(gt_dir)
    stems = sorted({p.stem for p in pred_dir.iterdir() if p.suffix in (".pfm", ".png")})
    if not stems:
        raise ValueError(f"no predictions found in {pred_dir}")
    missing = [s for s in stems if _find_map(gt_dir, s) is None]
    if missing:
        raise ValueError(f"id mismatch: no ground truth for {missing}")
    per_sample = {}
    for stem in stems:
        pred = read_map(_find_map(pred_dir, stem))
        gt = read_map(_find_map(gt_dir, stem))
        per_sample[stem] = {"iou": iou(pred, gt), "mae": mae(pred, gt)}
    return {
        "count": len(stems),
        "mean_iou": float(np.mean([m["iou"] for m in per_sample.values()])),
        "mean_mae": float(np.mean([m["mae"] for m in per_sample.values()])),
        "per_sample": per_sample,
    }
