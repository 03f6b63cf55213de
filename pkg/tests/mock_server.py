"""Minimal in-process completions server for backend conformance tests."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class MockCompletionsServer:
    """Serves POST /v1/completions and records every request it sees."""

    def __init__(self, reply_text: str = " parallel for\n", status: int = 200,
                 delay: float = 0.0, logprobs: dict | None = None,
                 raw_body: bytes | None = None):
        self.reply_text = reply_text
        self.status = status
        self.delay = delay
        self.logprobs = logprobs
        self.raw_body = raw_body
        self.requests: list[dict] = []
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                server.requests.append({
                    "path": self.path,
                    "authorization": self.headers.get("Authorization"),
                    "content_type": self.headers.get("Content-Type"),
                    "body": json.loads(body) if body else None,
                })
                if server.delay:
                    time.sleep(server.delay)
                if server.raw_body is not None:
                    payload = server.raw_body
                else:
                    choice = {"text": server.reply_text, "finish_reason": "stop"}
                    if server.logprobs is not None:
                        choice["logprobs"] = server.logprobs
                    payload = json.dumps({"choices": [choice]}).encode()
                try:
                    self.send_response(server.status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                except (OSError, ValueError):
                    pass  # client gave up (timeout tests); nothing to answer

            def log_message(self, *args):
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)
        return False
