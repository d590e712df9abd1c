"""Scripted HTTP stand-ins for the remote model services."""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubServer:
    """Answers ``POST /<route>`` from per-route scripts and records every request.

    A script is a list consumed front to back; each item is ``(status, body)``
    where ``body`` is a dict (sent as JSON) or raw bytes.  A callable script
    receives the decoded request and returns such a pair.
    """

    def __init__(self, routes: dict):
        self.routes = {k.strip("/"): (v if callable(v) else list(v)) for k, v in routes.items()}
        self.requests: list[tuple[str, dict]] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                route = self.path.strip("/")
                try:
                    req = json.loads(raw)
                except ValueError:
                    req = None
                with stub._lock:
                    stub.requests.append((route, req, dict(self.headers)))
                    script = stub.routes.get(route)
                    if script is None:
                        status, body = 404, {"error": "no such route"}
                    elif callable(script):
                        status, body = script(req)
                    elif script:
                        status, body = script.pop(0)
                    else:
                        status, body = 500, {"error": "script exhausted"}
                data = body if isinstance(body, bytes) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()

    def routes_hit(self) -> list[str]:
        return [r for r, _, _ in self.requests]


def replay_routes(fixture: dict) -> dict:
    """Scripts that serve a recorded session in order."""
    return {
        "annotate": [(200, {"protocol_version": "1", "text": t}) for t in fixture["annotate"]],
        "remove": [(200, {"protocol_version": "1", "image": png}) for png in fixture["remove"]],
    }
