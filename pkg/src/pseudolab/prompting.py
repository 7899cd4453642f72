"""Turning a weighted pseudo-label into promptable-segmenter prompts.

The map is thresholded into contour components; tiny fragments are
dropped (never leaving the set empty); the survivors yield one union
bounding box plus one interior point each. A centroid that misses its
own component is relocated by scanning along the component's major axis,
falling back to the globally nearest component pixel. The segmenter's
answer is then fused with the weighted map.

Pixel coordinates are (x, y) with x = column, y = row, origin top-left.
Prompt sets serialize to {"points": [[x, y], ...], "box": [x_min, y_min,
x_max, y_max]} with inclusive box bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .pixmap import BinaryMask, ProbMap, binarize

PROMPT_MODES = ("points_only", "box_only", "hybrid")
FUSION_MODES = ("ratio", "intersect", "union")

# Eigenvalue gap below this ratio counts as isotropic; the axial scan
# then falls back to the horizontal axis.
_ISOTROPY_EPS = 1e-9


class NoForegroundError(Exception):
    """The thresholded map has no foreground pixels to prompt from."""


@dataclass(frozen=True)
class Component:
    """One connected foreground region.

    bbox is (x_min, y_min, x_max, y_max), inclusive; centroid is the
    arithmetic mean of the pixel coordinates.
    """

    id: int
    pixels: frozenset[tuple[int, int]]
    area: int
    bbox: tuple[int, int, int, int]
    centroid: tuple[float, float]

    def __post_init__(self):
        if self.area != len(self.pixels) or self.area == 0:
            raise ValueError("component area must equal its nonzero pixel count")


@dataclass(frozen=True)
class PromptSet:
    """Hybrid prompt: one union box plus one safe point per component."""

    points: tuple[tuple[int, int], ...]
    box: tuple[int, int, int, int] | None
    mode: str

    def __post_init__(self):
        if self.mode not in PROMPT_MODES:
            raise ValueError(f"mode must be one of {PROMPT_MODES}, got {self.mode!r}")
        if self.mode in ("box_only", "hybrid") and self.box is None:
            raise ValueError(f"{self.mode} prompt requires a box")
        if self.mode in ("points_only", "hybrid") and not self.points:
            raise ValueError(f"{self.mode} prompt requires at least one point")
        if self.box is not None:
            x0, y0, x1, y1 = self.box
            if x0 > x1 or y0 > y1:
                raise ValueError(f"degenerate box {self.box}")

    def to_payload(self) -> dict:
        payload: dict = {}
        if self.mode in ("points_only", "hybrid"):
            payload["points"] = [[int(x), int(y)] for x, y in self.points]
        if self.mode in ("box_only", "hybrid"):
            payload["box"] = [int(v) for v in self.box]
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "PromptSet":
        points = tuple((int(x), int(y)) for x, y in payload.get("points") or ())
        box = payload.get("box")
        if box is not None:
            box = tuple(int(v) for v in box)
        if box is not None and points:
            mode = "hybrid"
        elif box is not None:
            mode = "box_only"
        elif points:
            mode = "points_only"
        else:
            raise ValueError("prompt payload carries neither points nor box")
        return cls(points=points, box=box, mode=mode)


@dataclass(frozen=True)
class DpcConfig:
    """Knobs for component filtering, prompt synthesis, and fusion.

    A component survives filtering iff its area reaches both the absolute
    floor and the given fraction of total foreground; if nothing survives
    the largest component is kept anyway.
    """

    min_area_abs: int = 16
    min_area_rel: float = 0.01
    connectivity: int = 8
    binarize_threshold: float = 0.5
    fusion: str = "ratio"
    fusion_binarize: float | None = None
    prompt_mode: str = "hybrid"

    def __post_init__(self):
        if self.min_area_abs < 0:
            raise ValueError(f"min_area_abs must be >= 0, got {self.min_area_abs}")
        if not 0.0 <= self.min_area_rel < 1.0:
            raise ValueError(f"min_area_rel must lie in [0, 1), got {self.min_area_rel}")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if not 0.0 <= self.binarize_threshold <= 1.0:
            raise ValueError(f"binarize_threshold must lie in [0, 1], got {self.binarize_threshold}")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.fusion_binarize is not None and not 0.0 <= self.fusion_binarize <= 1.0:
            raise ValueError(f"fusion_binarize must lie in [0, 1], got {self.fusion_binarize}")
        if self.prompt_mode not in PROMPT_MODES:
            raise ValueError(f"prompt_mode must be one of {PROMPT_MODES}, got {self.prompt_mode!r}")


def extract_components(mask: BinaryMask, cfg: DpcConfig = DpcConfig()) -> list[Component]:
    """Connected components under the configured connectivity.

    Components are id'd in deterministic order: ascending (y_min, x_min),
    with exact ties broken by the first pixel in row-major order.
    """
    structure = ndimage.generate_binary_structure(2, 2 if cfg.connectivity == 8 else 1)
    labels, count = ndimage.label(mask.data, structure=structure)
    found = []
    for lab, slc in enumerate(ndimage.find_objects(labels), start=1):
        if slc is None:
            continue
        ys, xs = np.nonzero(labels[slc] == lab)
        ys = ys + slc[0].start
        xs = xs + slc[1].start
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        centroid = (float(xs.mean()), float(ys.mean()))
        first = min(zip(ys.tolist(), xs.tolist()))
        found.append((bbox[1], bbox[0], first, bbox, centroid, xs, ys))
    found.sort(key=lambda item: item[:3])
    components = []
    for cid, (_, _, _, bbox, centroid, xs, ys) in enumerate(found):
        pixels = frozenset(zip(xs.tolist(), ys.tolist()))
        components.append(Component(id=cid, pixels=pixels, area=len(pixels), bbox=bbox, centroid=centroid))
    return components


def filter_small(
    components: list[Component],
    total_foreground: int,
    cfg: DpcConfig = DpcConfig(),
) -> list[Component]:
    """Drop fragments below max(min_area_abs, min_area_rel * foreground).

    A nonempty input never filters to nothing: if every component falls
    below the threshold, the single largest survives.
    """
    if not components:
        return []
    threshold = max(float(cfg.min_area_abs), cfg.min_area_rel * total_foreground)
    kept = [c for c in components if c.area >= threshold]
    if kept:
        return kept
    return [max(components, key=lambda c: (c.area, -c.id))]


def box_prompt(components: list[Component]) -> tuple[int, int, int, int]:
    """Single minimum bounding rectangle over all retained components."""
    if not components:
        raise ValueError("no components to box")
    x0 = min(c.bbox[0] for c in components)
    y0 = min(c.bbox[1] for c in components)
    x1 = max(c.bbox[2] for c in components)
    y1 = max(c.bbox[3] for c in components)
    return (x0, y0, x1, y1)


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def _major_axis(component: Component) -> tuple[float, float]:
    """Unit principal axis of the pixel cloud, sign-normalized to +x (or +y)."""
    if component.area < 2:
        return (1.0, 0.0)
    pts = np.array(sorted(component.pixels), dtype=np.float64)
    cov = np.cov(pts[:, 0], pts[:, 1], bias=True)
    eigvals, eigvecs = np.linalg.eigh(cov)
    lo, hi = float(eigvals[0]), float(eigvals[1])
    if hi <= 0.0 or hi - lo <= _ISOTROPY_EPS * hi:
        return (1.0, 0.0)
    vx, vy = float(eigvecs[0, 1]), float(eigvecs[1, 1])
    if vx < 0.0 or (vx == 0.0 and vy < 0.0):
        vx, vy = -vx, -vy
    return (vx, vy)


def safe_center(component: Component, mask: BinaryMask) -> tuple[int, int]:
    """Interior point for a component: the centroid when it lands inside.

    Otherwise integer steps are scanned outward along +/- the major axis
    from the centroid (positive direction wins distance ties); if both
    directions leave the image with no hit, the component pixel nearest
    the centroid is returned. The result always lies on the component.
    """
    cx, cy = component.centroid
    start = (_round_half_up(cx), _round_half_up(cy))
    if start in component.pixels:
        return start
    vx, vy = _major_axis(component)
    width, height = mask.width, mask.height
    step = 1
    while True:
        pos = (_round_half_up(cx + step * vx), _round_half_up(cy + step * vy))
        neg = (_round_half_up(cx - step * vx), _round_half_up(cy - step * vy))
        pos_in = 0 <= pos[0] < width and 0 <= pos[1] < height
        neg_in = 0 <= neg[0] < width and 0 <= neg[1] < height
        if pos_in and pos in component.pixels:
            return pos
        if neg_in and neg in component.pixels:
            return neg
        if not pos_in and not neg_in:
            break
        step += 1
    return min(
        component.pixels,
        key=lambda p: ((p[0] - cx) ** 2 + (p[1] - cy) ** 2, p[1], p[0]),
    )


def make_prompts(weighted: ProbMap, cfg: DpcConfig = DpcConfig()) -> PromptSet:
    """Threshold, filter, and convert a weighted map into a prompt set."""
    mask = binarize(weighted, cfg.binarize_threshold)
    components = extract_components(mask, cfg)
    if not components:
        raise NoForegroundError("map is all background after thresholding")
    kept = filter_small(components, mask.foreground, cfg)
    points: tuple[tuple[int, int], ...] = ()
    box = None
    if cfg.prompt_mode in ("points_only", "hybrid"):
        points = tuple(safe_center(c, mask) for c in kept)
    if cfg.prompt_mode in ("box_only", "hybrid"):
        box = box_prompt(kept)
    return PromptSet(points=points, box=box, mode=cfg.prompt_mode)


def fuse(pe: ProbMap, ps: ProbMap, cfg: DpcConfig = DpcConfig()) -> ProbMap:
    """Fuse the weighted map with the segmenter's map.

    ratio averages the two in equal proportion; intersect/union take the
    pointwise min/max. With fusion_binarize set, the result is thresholded
    to a {0, 1} map.
    """
    if pe.data.shape != ps.data.shape:
        raise ValueError(f"dimension mismatch: {pe.data.shape} vs {ps.data.shape}")
    if cfg.fusion == "ratio":
        fused = 0.5 * pe.data + 0.5 * ps.data
    elif cfg.fusion == "intersect":
        fused = np.minimum(pe.data, ps.data)
    else:
        fused = np.maximum(pe.data, ps.data)
    if cfg.fusion_binarize is not None:
        fused = (fused > cfg.fusion_binarize).astype(np.float64)
    return ProbMap(fused)
