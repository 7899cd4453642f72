"""Grayscale PFM writing, matching the orchestrator's mask payload format.

"Pf", little-endian float32, scale -1.0, rows stored bottom-up.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


def write_pfm(values: np.ndarray, path) -> None:
    if values.ndim != 2 or values.size == 0:
        raise ValueError(f"PFM payload must be a nonempty 2-D array, got shape {values.shape}")
    path = Path(path)
    height, width = values.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    payload = np.flipud(values.astype("<f4")).tobytes()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + payload)
    os.replace(tmp, path)
