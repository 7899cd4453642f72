"""Synthetic binary-mask corpus for self-contained runs and tests.

Generates seed-deterministic scenes of filled blobs, rings, and
multi-object layouts at a fixed square size, plus low-contrast grayscale
renderings that stand in for camouflage imagery. Layout on disk:

    corpus_dir/
      images/<id>.png   RGB rendering
      gt/<id>.png       binary mask, {0, 255}
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .pixmap import BinaryMask, write_mask


def _ellipse(size: int, cx: float, cy: float, rx: float, ry: float, theta: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    dx = xs - cx
    dy = ys - cy
    c, s = np.cos(theta), np.sin(theta)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _blob(rng: np.random.Generator, size: int) -> np.ndarray:
    cx = rng.uniform(0.3, 0.7) * size
    cy = rng.uniform(0.3, 0.7) * size
    rx = rng.uniform(0.16, 0.28) * size
    ry = rx * rng.uniform(0.7, 1.3)
    return _ellipse(size, cx, cy, rx, ry, rng.uniform(0.0, np.pi))


def _ring(rng: np.random.Generator, size: int) -> np.ndarray:
    cx = rng.uniform(0.4, 0.6) * size
    cy = rng.uniform(0.4, 0.6) * size
    outer = rng.uniform(0.17, 0.23) * size
    inner = outer - rng.uniform(0.10, 0.14) * size
    ys, xs = np.mgrid[0:size, 0:size]
    dist = np.hypot(xs - cx, ys - cy)
    return (dist <= outer) & (dist > inner)


def _multi(rng: np.random.Generator, size: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    count = int(rng.integers(2, 4))
    # Keep total perimeter moderate: three objects draw smaller radii.
    radius_range = (0.10, 0.16) if count == 2 else (0.08, 0.11)
    anchors = [(0.28, 0.28), (0.72, 0.72), (0.28, 0.72), (0.72, 0.28)]
    rng.shuffle(anchors)
    for ax, ay in anchors[:count]:
        cx = (ax + rng.uniform(-0.04, 0.04)) * size
        cy = (ay + rng.uniform(-0.04, 0.04)) * size
        rx = rng.uniform(*radius_range) * size
        ry = rx * rng.uniform(0.75, 1.3)
        mask |= _ellipse(size, cx, cy, rx, ry, rng.uniform(0.0, np.pi))
    return mask


def _render_image(rng: np.random.Generator, mask: np.ndarray) -> np.ndarray:
    soft = ndimage.gaussian_filter(mask.astype(np.float64), sigma=1.5)
    gray = 112.0 + 36.0 * soft + rng.normal(0.0, 11.0, mask.shape)
    gray = np.clip(gray, 0, 255).astype(np.uint8)
    return np.stack([gray, gray, gray], axis=-1)


def generate_corpus(out_dir, count: int = 64, size: int = 128, seed: int = 0) -> list[tuple[str, str, str]]:
    """Write a corpus and return (id, image_path, gt_path) records."""
    if count < 1 or size < 32:
        raise ValueError("corpus needs count >= 1 and size >= 32")
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    gt_dir = out_dir / "gt"
    images_dir.mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    makers = (_blob, _ring, _multi)
    records = []
    for index in range(count):
        maker = makers[index % len(makers)]
        mask = maker(rng, size)
        # Regenerate degenerate draws so every sample has usable foreground.
        while not 0.02 <= mask.mean() <= 0.6:
            mask = maker(rng, size)
        sample_id = f"s{index:03d}"
        gt_path = gt_dir / f"{sample_id}.png"
        image_path = images_dir / f"{sample_id}.png"
        write_mask(BinaryMask(mask), gt_path)
        Image.fromarray(_render_image(rng, mask), mode="RGB").save(image_path, format="PNG")
        records.append((sample_id, str(image_path), str(gt_path)))
    return records


def corpus_records(images_dir, gt_dir) -> list[tuple[str, str, str]]:
    """Pair up image and ground-truth files by stem."""
    images_dir = Path(images_dir)
    gt_dir = Path(gt_dir)
    records = []
    for image_path in sorted(images_dir.glob("*.png")):
        gt_path = gt_dir / image_path.name
        if not gt_path.is_file():
            raise ValueError(f"no ground truth for {image_path.stem!r} in {gt_dir}")
        records.append((image_path.stem, str(image_path), str(gt_path)))
    if not records:
        raise ValueError(f"no images found in {images_dir}")
    return records
