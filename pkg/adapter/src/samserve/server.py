"""NDJSON request loop translating protocol prompts into model prompts.

Requests: {"request_id": ..., "image_path": ..., "prompts": {"points":
[[x, y], ...], "box": [x0, y0, x1, y1]}}. Responses echo the request_id
with status ok/error; masks travel by PFM file path. One request is
served at a time; the orchestrator runs extra instances for parallelism.
"""

from __future__ import annotations

import json
import logging
import socket
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .pfm import write_pfm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdapterConfig:
    """Service configuration: which model to wrap and where to listen."""

    backend: str = "stub"
    model_variant: str = "vit_h"
    checkpoint: str = ""
    device: str = "cpu"
    listen: str = "stdio"
    workdir: str = "."

    def __post_init__(self):
        if self.listen != "stdio" and not self.listen.startswith("tcp:"):
            raise ValueError(f"listen must be 'stdio' or 'tcp:PORT', got {self.listen!r}")


def _parse_prompts(prompts: dict) -> tuple[list[tuple[int, int]], tuple[int, int, int, int] | None]:
    points = [(int(x), int(y)) for x, y in prompts.get("points") or ()]
    box = prompts.get("box")
    if box is not None:
        if len(box) != 4:
            raise ValueError(f"box must have 4 coordinates, got {box!r}")
        box = tuple(int(v) for v in box)
    if not points and box is None:
        raise ValueError("prompt payload carries neither points nor box")
    return points, box


class AdapterServer:
    def __init__(self, config: AdapterConfig, backend):
        self.config = config
        self.backend = backend
        self.workdir = Path(config.workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)

    def handle(self, request: dict) -> dict:
        rid = request.get("request_id")
        image_path = request.get("image_path") or ""
        prompts = request.get("prompts")
        if not prompts:
            return {"request_id": rid, "status": "error", "message": "promptable role requires prompts"}
        if not Path(image_path).is_file():
            return {"request_id": rid, "status": "error", "message": f"unknown image {image_path!r}"}
        try:
            points, box = _parse_prompts(prompts)
            with Image.open(image_path) as img:
                image = np.asarray(img.convert("RGB"))
            mask = self.backend.predict(image, points, box)
            if mask.shape != image.shape[:2]:
                raise ValueError(f"backend returned {mask.shape}, image is {image.shape[:2]}")
            mask_path = self.workdir / f"{rid}.pfm"
            write_pfm(np.clip(mask, 0.0, 1.0), mask_path)
        except (ValueError, OSError) as exc:
            return {"request_id": rid, "status": "error", "message": str(exc)}
        return {"request_id": rid, "status": "ok", "mask_path": str(mask_path)}

    def _serve_streams(self, reader, writer) -> None:
        for raw in reader:
            line = raw.strip()
            if not line:
                continue
            try:
                request = json.loads(line.decode("utf-8"))
                if not isinstance(request, dict):
                    raise ValueError("request must be a JSON object")
            except (ValueError, UnicodeDecodeError) as exc:
                response = {"request_id": None, "status": "error", "message": f"malformed request line: {exc}"}
            else:
                try:
                    response = self.handle(request)
                except Exception as exc:  # noqa: BLE001 - keep serving
                    log.exception("request failed")
                    response = {
                        "request_id": request.get("request_id"),
                        "status": "error",
                        "message": f"internal error: {exc}",
                    }
            writer.write((json.dumps(response) + "\n").encode("utf-8"))
            writer.flush()

    def serve_forever(self) -> None:
        if self.config.listen == "stdio":
            self._serve_streams(sys.stdin.buffer, sys.stdout.buffer)
            return
        port = int(self.config.listen.split(":", 1)[1])
        with socket.create_server(("127.0.0.1", port)) as server:
            print(f"listening on 127.0.0.1:{server.getsockname()[1]}", file=sys.stderr, flush=True)
            while True:
                conn, _ = server.accept()
                with conn:
                    self._serve_streams(conn.makefile("rb"), conn.makefile("wb"))
