"""A tiny in-process chat-completions stub used by record/replay tests."""

from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, HTTPServer

from dualreflect.backend import ScriptStep


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers["Content-Length"])
        self.server.requests.append(json.loads(self.rfile.read(length)))
        if not self.server.script:
            self.send_response(500)
            self.end_headers()
            return
        step: ScriptStep = self.server.script.pop(0)
        payload = {
            "choices": [{"message": {"role": "assistant", "content": step.response.text}}],
            "usage": {
                "prompt_tokens": step.response.prompt_tokens,
                "completion_tokens": step.response.completion_tokens,
            },
        }
        raw = json.dumps(payload).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@contextmanager
def serve_script(steps: list[ScriptStep]):
    """Serve the given script over HTTP; yields (base_url, server)."""
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    server.script = list(steps)
    server.requests = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}", server
    finally:
        server.shutdown()
        server.server_close()
