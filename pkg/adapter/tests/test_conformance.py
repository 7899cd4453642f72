"""Black-box protocol conformance: the same vectors the mock segmenter passes.

The vectors live in the orchestrator toolkit and drive this service
purely over its stdio; no segmentation-quality numbers are asserted.
"""

import json
import sys

import numpy as np
import pytest
from PIL import Image

from pseudolab.conformance import StdioProcessHarness, check_segmenter_conformance


@pytest.fixture()
def image_file(tmp_path):
    path = tmp_path / "scene.png"
    Image.fromarray(np.full((40, 56, 3), 90, dtype=np.uint8), mode="RGB").save(path)
    return path


def serve_command(workdir) -> list[str]:
    return [
        sys.executable, "-m", "samserve.cli", "serve",
        "--backend", "stub", "--workdir", str(workdir),
    ]


def test_adapter_passes_shared_protocol_vectors(image_file, tmp_path):
    with StdioProcessHarness(serve_command(tmp_path / "masks")) as harness:
        check_segmenter_conformance(
            harness,
            str(image_file),
            (40, 56),
            promptable=True,
            prompts={"points": [[10, 10]], "box": [4, 4, 30, 30]},
        )


def test_adapter_keeps_serving_after_request_errors(image_file, tmp_path):
    with StdioProcessHarness(serve_command(tmp_path / "masks")) as harness:
        harness.send_line(json.dumps({"request_id": "a", "image_path": str(image_file)}))
        first = json.loads(harness.recv_line())
        assert first["status"] == "error"
        harness.send_line(
            json.dumps(
                {
                    "request_id": "b",
                    "image_path": str(image_file),
                    "prompts": {"box": [0, 0, 10, 10]},
                }
            )
        )
        second = json.loads(harness.recv_line())
        assert second["status"] == "ok"
        assert second["request_id"] == "b"


def test_sam_backend_startup_abort_exit_code(tmp_path):
    import subprocess

    proc = subprocess.run(
        [
            sys.executable, "-m", "samserve.cli", "serve",
            "--backend", "sam", "--checkpoint", str(tmp_path / "missing.pth"),
            "--workdir", str(tmp_path / "masks"),
        ],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 2
    assert "startup error" in proc.stderr
