"""HTTP/JSON control plane: device inventory, pending containment decisions,
policy stats, hot signature upload, and a server-sent event stream.

Localhost-bound by default and unauthenticated; the traffic plane is only
reachable through the resolve and signature endpoints.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import os
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from usbgate.core import GatewayCore
from usbgate.engine import ConfigError
from usbgate.policies.containment import ResolveError

logger = logging.getLogger(__name__)

SSE_KEEPALIVE_S = 15.0


class ControlServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, handler, core: GatewayCore, ui_dir: str | None):
        self.core = core
        self.ui_dir = ui_dir
        self.stop_event = threading.Event()
        self.sse_keepalive_s = SSE_KEEPALIVE_S
        super().__init__(addr, handler)


class ControlHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: ControlServer

    def log_message(self, fmt, *args):  # route through logging, not stderr
        logger.debug("control: " + fmt, *args)

    # -- plumbing ----------------------------------------------------------

    def _json(self, status: int, body) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _read_body(self):
        length = int(self.headers.get("Content-Length", "0"))
        if length <= 0:
            return None
        try:
            return json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            return None

    # -- routes ------------------------------------------------------------------

    def do_GET(self) -> None:
        url = urlparse(self.path)
        if url.path == "/v1/devices":
            query = parse_qs(url.query)
            device_id = int(query["device_id"][0]) if "device_id" in query else None
            self._json(200, self.server.core.devices_json(device_id))
        elif url.path == "/v1/pending":
            self._json(200, self.server.core.services.pending_store.snapshot())
        elif url.path == "/v1/stats":
            self._json(200, self.server.core.stats_json())
        elif url.path == "/v1/events":
            self._serve_events(url)
        elif url.path == "/" or url.path == "/ui":
            self.send_response(302)
            self.send_header("Location", "/ui/")
            self.send_header("Content-Length", "0")
            self.end_headers()
        elif url.path.startswith("/ui/"):
            self._serve_static(url.path[len("/ui/") :] or "index.html")
        else:
            self._json(404, {"error": f"no such path {url.path}"})

    def do_POST(self) -> None:
        url = urlparse(self.path)
        if url.path.startswith("/v1/pending/"):
            self._resolve_pending(url.path[len("/v1/pending/") :])
        elif url.path == "/v1/signatures":
            self._add_signature()
        else:
            self._json(404, {"error": f"no such path {url.path}"})

    def _resolve_pending(self, decision_id: str) -> None:
        store = self.server.core.services.pending_store
        body = self._read_body()
        if not isinstance(body, dict) or not isinstance(body.get("dispositions"), dict):
            self._json(400, {"error": "body must be {\"dispositions\": {...}}"})
            return
        if decision_id not in store.decisions:
            self._json(404, {"error": f"unknown decision {decision_id}"})
            return
        try:
            decision = store.resolve(decision_id, body["dispositions"])
        except ResolveError as exc:
            status = 409 if "already resolved" in str(exc) else 400
            self._json(status, {"error": str(exc)})
            return
        self._json(200, decision.as_json())

    def _add_signature(self) -> None:
        body = self._read_body()
        if body is None:
            self._json(400, {"error": "body must be a signature object"})
            return
        try:
            sig_id = self.server.core.add_signature(body)
        except (ConfigError, ValueError) as exc:
            self._json(400, {"error": str(exc)})
            return
        self._json(201, {"id": sig_id})

    # -- server-sent events ---------------------------------------------------------

    def _serve_events(self, url) -> None:
        query = parse_qs(url.query)
        last = int(self.headers.get("Last-Event-ID", query.get("last_event_id", ["0"])[0]))
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        bus = self.server.core.events
        keepalive_s = self.server.sse_keepalive_s
        last_write = time.monotonic()
        try:
            while not self.server.stop_event.is_set():
                events = bus.wait_since(last, timeout=0.25)
                if events:
                    for event in events:
                        payload = (
                            f"id: {event.seq}\nevent: {event.kind}\n"
                            f"data: {json.dumps(event.body)}\n\n"
                        )
                        self.wfile.write(payload.encode("utf-8"))
                        last = event.seq
                    self.wfile.flush()
                    last_write = time.monotonic()
                elif time.monotonic() - last_write >= keepalive_s:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    last_write = time.monotonic()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass

    # -- dashboard static files --------------------------------------------------------

    def _serve_static(self, rel: str) -> None:
        ui_dir = self.server.ui_dir
        if ui_dir is None:
            self._json(404, {"error": "no dashboard bundled (start with --ui)"})
            return
        full = os.path.normpath(os.path.join(ui_dir, rel))
        if os.path.commonpath([os.path.abspath(full), os.path.abspath(ui_dir)]) != os.path.abspath(ui_dir):
            self._json(404, {"error": "bad path"})
            return
        if not os.path.isfile(full):
            self._json(404, {"error": f"no such file {rel}"})
            return
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as fh:
            data = fh.read()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def make_control_server(
    core: GatewayCore, addr: tuple[str, int], ui_dir: str | None = None
) -> ControlServer:
    return ControlServer(addr, ControlHandler, core, ui_dir)
