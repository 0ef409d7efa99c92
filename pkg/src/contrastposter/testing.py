"""Bundled zero-velocity wire-protocol server for tests and offline runs.

Implements the full velocity/decode/health protocol with a model that always
returns zero velocity and decodes any latent to a mid-gray image.  Runs
threaded in-process; use as a context manager:

    with ZeroVelocityServer() as srv:
        model = RemoteVelocityModel(srv.endpoint)
"""

from __future__ import annotations

import base64
import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from contrastposter import wire


class _Handler(BaseHTTPRequestHandler):
    channels = 4

    def log_message(self, *args):  # keep test output clean
        pass

    def _reply(self, code: int, obj: dict) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        try:
            payload = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._reply(400, {"error": "invalid JSON"})
            return
        if self.path == wire.HEALTH_PATH:
            self._reply(200, {"ok": True, "channels": self.channels})
        elif self.path == wire.VELOCITY_PATH:
            problems = wire.validate_message(payload, "velocity_request")
            if problems:
                self._reply(400, {"error": "; ".join(problems)})
                return
            shape = tuple(int(s) for s in payload["shape"])
            try:
                wire.decode_f32(payload["latent_b64"], shape)
            except wire.BackendError as exc:
                self._reply(400, {"error": str(exc)})
                return
            zeros = np.zeros(shape, dtype="<f4")
            self._reply(200, {"shape": list(shape), "velocity_b64": wire.encode_f32(zeros)})
        elif self.path == wire.DECODE_PATH:
            from PIL import Image

            shape = tuple(int(s) for s in payload["shape"])
            try:
                wire.decode_f32(payload["latent_b64"], shape)
            except wire.BackendError as exc:
                self._reply(400, {"error": str(exc)})
                return
            h, w = shape[1] * 8, shape[2] * 8
            img = Image.fromarray(np.full((h, w, 3), 128, dtype=np.uint8))
            buf = io.BytesIO()
            img.save(buf, format="PNG")
            self._reply(200, {"png_b64": base64.b64encode(buf.getvalue()).decode("ascii")})
        else:
            self._reply(404, {"error": f"unknown path {self.path}"})


class ZeroVelocityServer:
    """Threaded in-process server speaking the wire protocol with a zero model."""

    def __init__(self, channels: int = 4, port: int = 0):
        handler = type("Handler", (_Handler,), {"channels": channels})
        self._srv = ThreadingHTTPServer(("127.0.0.1", port), handler)
        self._thread = threading.Thread(target=self._srv.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        return f"http://127.0.0.1:{self._srv.server_address[1]}"

    def __enter__(self) -> "ZeroVelocityServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._srv.shutdown()
        self._srv.server_close()
