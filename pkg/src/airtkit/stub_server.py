"""Scriptable stand-in for a detection endpoint, for integration tests.

Each POST consumes the next scripted reply (the last one repeats). A reply
is a dict with optional keys ``status`` (HTTP code, default 200), ``body``
(JSON-serialisable object or raw ``bytes``) and ``delay_s``. Every request
body is recorded on ``server.requests``.

Run standalone with ``python -m airtkit.stub_server --bbox 1 2 3 4``.
"""
from __future__ import annotations

import argparse
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        stub = self.server.stub
        n = int(self.headers.get("Content-Length", 0))
        payload = self.rfile.read(n)
        with stub.lock:
            try:
                stub.requests.append(json.loads(payload))
            except json.JSONDecodeError:
                stub.requests.append(payload)
            reply = stub.script[min(stub.calls, len(stub.script) - 1)]
            stub.calls += 1
        if reply.get("delay_s"):
            time.sleep(reply["delay_s"])
        body = reply.get("body", {})
        data = body if isinstance(body, bytes) else json.dumps(body).encode()
        self.send_response(reply.get("status", 200))
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, fmt, *args):
        pass


class StubServer:
    """Context manager serving scripted replies on ``127.0.0.1`` (ephemeral port)."""

    def __init__(self, script=None, host="127.0.0.1", port=0):
        self.script = list(script or [{"body": {"bbox": [1, 2, 3, 4], "confidence": 0.9}}])
        self.requests = []
        self.calls = 0
        self.lock = threading.Lock()
        self.httpd = ThreadingHTTPServer((host, port), _Handler)
        self.httpd.stub = self
        self._thread = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/detect"

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def main(argv=None):
    ap = argparse.ArgumentParser(description="Serve a fixed detection reply.")
    ap.add_argument("--bbox", nargs=4, type=float, default=[1, 2, 3, 4])
    ap.add_argument("--confidence", type=float, default=0.9)
    ap.add_argument("--port", type=int, default=8765)
    args = ap.parse_args(argv)
    stub = StubServer([{"body": {"bbox": args.bbox, "confidence": args.confidence}}], port=args.port)
    print(f"serving on {stub.url}", flush=True)
    try:
        stub.httpd.serve_forever()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
