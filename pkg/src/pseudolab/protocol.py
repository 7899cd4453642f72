"""Newline-delimited JSON protocol between the orchestrator and segmenters.

One request per line: {"request_id": str, "image_path": str, "prompts":
{...}?}. One response per line: {"request_id": str, "status": "ok" |
"error", "mask_path": str?, "message": str?}. Mask payloads travel by
file path as grayscale PFM probability maps.

Clients speak the protocol over a spawned subprocess's stdio or a local
TCP socket. Responses are matched to requests by request_id, so multiple
requests may be in flight on one connection; a background reader thread
routes each response to its waiting caller.
"""

from __future__ import annotations

import json
import logging
import socket
import subprocess
import threading
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout

log = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_ERROR = "error"


class ProtocolError(Exception):
    """Transport failure or a malformed/violating message."""


def ok_response(request_id, mask_path: str) -> dict:
    return {"request_id": request_id, "status": STATUS_OK, "mask_path": str(mask_path)}


def error_response(request_id, message: str) -> dict:
    return {"request_id": request_id, "status": STATUS_ERROR, "message": message}


def serve_ndjson(handler, reader, writer) -> None:
    """Run a request loop over binary line streams until EOF.

    handler(request_dict) -> response_dict. Handler exceptions and
    malformed lines produce error responses; the loop keeps serving.
    """
    for raw in reader:
        line = raw.strip()
        if not line:
            continue
        try:
            request = json.loads(line.decode("utf-8"))
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
        except (ValueError, UnicodeDecodeError) as exc:
            response = error_response(None, f"malformed request line: {exc}")
        else:
            try:
                response = handler(request)
            except Exception as exc:  # noqa: BLE001 - single-request blast radius
                log.exception("handler failed")
                response = error_response(request.get("request_id"), f"internal error: {exc}")
        writer.write((json.dumps(response) + "\n").encode("utf-8"))
        writer.flush()


def serve_tcp(handler, host: str, port: int, *, ready_callback=None) -> None:
    """Accept connections one at a time, running the NDJSON loop on each."""
    with socket.create_server((host, port)) as server:
        if ready_callback is not None:
            ready_callback(server.getsockname()[1])
        while True:
            conn, _ = server.accept()
            with conn:
                reader = conn.makefile("rb")
                writer = conn.makefile("wb")
                serve_ndjson(handler, reader, writer)


class _NdjsonConnection:
    """Pipelined request/response matching over a pair of line streams."""

    def __init__(self, name: str):
        self.name = name
        self._write_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending: dict[str, Future] = {}
        self._counter = 0
        self._closed = False
        self._reader_thread: threading.Thread | None = None

    # Subclasses set self._reader / self._writer before calling this.
    def _start_reader(self) -> None:
        self._reader_thread = threading.Thread(
            target=self._read_loop, name=f"{self.name}-reader", daemon=True
        )
        self._reader_thread.start()

    def _read_loop(self) -> None:
        try:
            for raw in self._reader:
                line = raw.strip()
                if not line:
                    continue
                try:
                    message = json.loads(line.decode("utf-8"))
                except (ValueError, UnicodeDecodeError):
                    log.warning("%s: dropping undecodable response line", self.name)
                    continue
                rid = message.get("request_id")
                with self._pending_lock:
                    future = self._pending.pop(rid, None)
                if future is None:
                    log.warning("%s: response for unknown request_id %r", self.name, rid)
                    continue
                future.set_result(message)
        except (OSError, ValueError):
            pass
        self._fail_pending(ProtocolError(f"{self.name}: connection closed"))

    def _fail_pending(self, exc: Exception) -> None:
        with self._pending_lock:
            pending, self._pending = self._pending, {}
        for future in pending.values():
            if not future.done():
                future.set_exception(exc)

    def request(self, image_path: str, prompts: dict | None = None, timeout: float = 30.0) -> dict:
        """Send one request and wait for its matching response."""
        with self._pending_lock:
            if self._closed:
                raise ProtocolError(f"{self.name}: client is closed")
            self._counter += 1
            rid = f"q{self._counter:06d}"
            future: Future = Future()
            self._pending[rid] = future
        payload = {"request_id": rid, "image_path": str(image_path)}
        if prompts is not None:
            payload["prompts"] = prompts
        line = (json.dumps(payload) + "\n").encode("utf-8")
        try:
            with self._write_lock:
                self._writer.write(line)
                self._writer.flush()
        except (OSError, ValueError) as exc:
            with self._pending_lock:
                self._pending.pop(rid, None)
            raise ProtocolError(f"{self.name}: send failed: {exc}") from exc
        try:
            response = future.result(timeout=timeout)
        except FutureTimeout:
            with self._pending_lock:
                self._pending.pop(rid, None)
            raise ProtocolError(f"{self.name}: timed out after {timeout}s waiting for {rid}") from None
        if response.get("status") not in (STATUS_OK, STATUS_ERROR):
            raise ProtocolError(f"{self.name}: response carries bad status: {response!r}")
        return response

    def probe(self, timeout: float = 10.0) -> None:
        """Verify the peer answers the protocol at all.

        An empty image path must draw an error response; any valid
        response proves liveness.
        """
        response = self.request("", timeout=timeout)
        if response.get("status") != STATUS_ERROR:
            log.warning("%s: probe unexpectedly succeeded", self.name)

    def close(self) -> None:
        with self._pending_lock:
            self._closed = True
        self._close_transport()
        self._fail_pending(ProtocolError(f"{self.name}: client closed"))

    def _close_transport(self) -> None:
        raise NotImplementedError


class StdioSegmenterClient(_NdjsonConnection):
    """Client that spawns the segmenter as a subprocess and talks over stdio."""

    def __init__(self, command: list[str], name: str = "segmenter"):
        super().__init__(name)
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,
            )
        except OSError as exc:
            raise ProtocolError(f"{name}: failed to spawn {command!r}: {exc}") from exc
        self._reader = self._proc.stdout
        self._writer = self._proc.stdin
        self._start_reader()

    def _close_transport(self) -> None:
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=10)
        except (OSError, subprocess.TimeoutExpired):
            self._proc.kill()
            self._proc.wait()


class TcpSegmenterClient(_NdjsonConnection):
    """Client for a segmenter listening on a local TCP address."""

    def __init__(self, host: str, port: int, name: str = "segmenter", connect_timeout: float = 10.0):
        super().__init__(name)
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
            self._sock.settimeout(None)
        except OSError as exc:
            raise ProtocolError(f"{name}: cannot connect to {host}:{port}: {exc}") from exc
        self._reader = self._sock.makefile("rb")
        self._writer = self._sock.makefile("wb")
        self._start_reader()

    def _close_transport(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
