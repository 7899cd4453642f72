"""Model backends: the real SAM-class predictor and a prompt-shaped stub.

A backend takes an RGB image plus point/box prompts and returns one
H x W probability map. The real backend loads segment-anything lazily so
the service (and its protocol tests) work without the heavyweight
dependency installed.
"""

from __future__ import annotations

import numpy as np

SAM_VARIANTS = ("vit_h", "vit_l", "vit_b")


class BackendError(Exception):
    """The backend cannot be constructed (missing dependency or weights)."""


class SegmentAnythingBackend:
    """Inference through segment-anything's predictor, weights untouched.

    Box and points are fed jointly as positive prompts; multimask output
    is disabled so each request yields exactly one mask, returned as
    sigmoid probabilities at the input resolution.
    """

    def __init__(self, checkpoint: str, model_variant: str = "vit_h", device: str = "cpu"):
        if model_variant not in SAM_VARIANTS:
            raise BackendError(f"unknown model variant {model_variant!r}, expected one of {SAM_VARIANTS}")
        from pathlib import Path

        if not checkpoint or not Path(checkpoint).is_file():
            raise BackendError(f"model checkpoint not found: {checkpoint!r}")
        try:
            from segment_anything import SamPredictor, sam_model_registry
        except ImportError as exc:
            raise BackendError(
                "segment-anything is not installed; install the [sam] extra to use this backend"
            ) from exc
        try:
            model = sam_model_registry[model_variant](checkpoint=checkpoint)
        except (KeyError, RuntimeError, OSError) as exc:
            raise BackendError(f"failed to load {model_variant} weights from {checkpoint}: {exc}") from exc
        model.to(device)
        self._predictor = SamPredictor(model)

    def predict(self, image: np.ndarray, points, box) -> np.ndarray:
        self._predictor.set_image(image)
        point_coords = np.asarray(points, dtype=np.float32) if points else None
        point_labels = np.ones(len(points), dtype=np.int32) if points else None
        box_arr = np.asarray(box, dtype=np.float32) if box is not None else None
        masks, _, _ = self._predictor.predict(
            point_coords=point_coords,
            point_labels=point_labels,
            box=box_arr,
            multimask_output=False,
            return_logits=True,
        )
        logits = masks[0].astype(np.float64)
        return 1.0 / (1.0 + np.exp(-logits))


class BoxFillBackend:
    """Deterministic stand-in for protocol testing without model weights.

    Fills the prompt box at high confidence and stamps a disc around each
    point; no segmentation quality is claimed.
    """

    def __init__(self, point_radius: float = 10.0):
        self.point_radius = point_radius

    def predict(self, image: np.ndarray, points, box) -> np.ndarray:
        height, width = image.shape[:2]
        out = np.zeros((height, width), dtype=np.float64)
        if box is not None:
            x0, y0, x1, y1 = (int(v) for v in box)
            out[max(y0, 0) : y1 + 1, max(x0, 0) : x1 + 1] = 0.9
        ys, xs = np.mgrid[0:height, 0:width]
        for x, y in points or ():
            out = np.maximum(out, (np.hypot(xs - int(x), ys - int(y)) <= self.point_radius) * 1.0)
        return out


def load_backend(kind: str, *, checkpoint: str = "", model_variant: str = "vit_h", device: str = "cpu"):
    if kind == "sam":
        return SegmentAnythingBackend(checkpoint=checkpoint, model_variant=model_variant, device=device)
    if kind == "stub":
        return BoxFillBackend()
    raise BackendError(f"unknown backend {kind!r}, expected 'sam' or 'stub'")
