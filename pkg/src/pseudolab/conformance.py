"""Black-box conformance vectors for segmenter protocol servers.

Any server claiming the plain or promptable role must pass these checks;
the bundled mock segmenter and external adapters are exercised with the
same vectors. The harness drives a server subprocess purely over its
stdio, one JSON line at a time.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
from pathlib import Path

from .pixmap import read_map


class StdioProcessHarness:
    """Line-level driver for a protocol server subprocess."""

    def __init__(self, command: list[str]):
        self.proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        for raw in self.proc.stdout:
            self._lines.put(raw.decode("utf-8").rstrip("\n"))
        self._lines.put(None)

    def send_line(self, line: str) -> None:
        self.proc.stdin.write((line + "\n").encode("utf-8"))
        self.proc.stdin.flush()

    def recv_line(self, timeout: float = 20.0) -> str:
        line = self._lines.get(timeout=timeout)
        if line is None:
            raise AssertionError("server closed its stdout before responding")
        return line

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=10)
        except (OSError, subprocess.TimeoutExpired):
            self.proc.kill()
            self.proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def _roundtrip(harness: StdioProcessHarness, payload: dict) -> dict:
    harness.send_line(json.dumps(payload))
    response = json.loads(harness.recv_line())
    assert isinstance(response, dict), f"response is not a JSON object: {response!r}"
    return response


def check_segmenter_conformance(
    harness: StdioProcessHarness,
    image_path: str,
    expected_hw: tuple[int, int],
    *,
    promptable: bool,
    prompts: dict | None = None,
) -> None:
    """Run every protocol vector against a live server; raises on failure.

    image_path must name a sample the server can segment, expected_hw its
    (height, width). Promptable servers get `prompts` on valid requests.
    """
    valid_prompts = prompts if prompts is not None else {"points": [[1, 1]], "box": [0, 0, 1, 1]}

    # Valid request: echoed id, ok status, readable mask of the right shape.
    request = {"request_id": "c-ok", "image_path": str(image_path)}
    if promptable:
        request["prompts"] = valid_prompts
    response = _roundtrip(harness, request)
    assert response.get("request_id") == "c-ok", f"request_id not echoed: {response!r}"
    assert response.get("status") == "ok", f"valid request rejected: {response!r}"
    mask_path = response.get("mask_path")
    assert mask_path and Path(mask_path).is_file(), f"mask_path missing or absent: {response!r}"
    mask = read_map(mask_path)
    assert (mask.height, mask.width) == tuple(expected_hw), (
        f"mask dimensions {(mask.height, mask.width)} != image dimensions {expected_hw}"
    )

    # Unknown image: error status, id still echoed, message present.
    request = {"request_id": "c-missing", "image_path": "no/such/image.png"}
    if promptable:
        request["prompts"] = valid_prompts
    response = _roundtrip(harness, request)
    assert response.get("request_id") == "c-missing", f"request_id not echoed: {response!r}"
    assert response.get("status") == "error", f"unknown image must error: {response!r}"
    assert response.get("message"), f"error response needs a message: {response!r}"

    # Promptable role must refuse prompt-less requests.
    if promptable:
        response = _roundtrip(harness, {"request_id": "c-noprompt", "image_path": str(image_path)})
        assert response.get("status") == "error", f"prompt-less request must error: {response!r}"
        assert response.get("request_id") == "c-noprompt", f"request_id not echoed: {response!r}"

    # Malformed line: server reports the error and keeps serving.
    harness.send_line("{not json")
    response = json.loads(harness.recv_line())
    assert response.get("status") == "error", f"malformed line must error: {response!r}"
    assert response.get("request_id") is None, f"malformed line has no id to echo: {response!r}"

    # Pipelining: two requests in flight, both answered, ids matched.
    for rid in ("c-pipe1", "c-pipe2"):
        request = {"request_id": rid, "image_path": str(image_path)}
        if promptable:
            request["prompts"] = valid_prompts
        harness.send_line(json.dumps(request))
    answered = {json.loads(harness.recv_line()).get("request_id") for _ in range(2)}
    assert answered == {"c-pipe1", "c-pipe2"}, f"pipelined ids mismatch: {answered}"
