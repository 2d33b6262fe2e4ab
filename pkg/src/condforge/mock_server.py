"""Deterministic scripted mock of the three annotation services.

Backs the test suite and offline pipeline runs.  Responses are driven by a
fixture dict (or file): either a scripted per-endpoint ``sequence`` consumed
request by request, or a content-derived mode that maps each image's 128-bit
id to a reproducible answer.  The server counts requests so tests can assert
retry policies exactly.

Fixture schema (all endpoints optional)::

    {
      "aesthetic": {"mode": "hash_uniform", "lo": 0.0, "hi": 10.0,
                    "overrides": {"<id-hex>": 7.5}},
      "caption":   {"mode": "hash_text"},
      "ground":    {"mode": "hash_boxes", "max_boxes": 3, "empty_ids": ["<id-hex>"]},
      "aesthetic": {"sequence": [{"status": 503}, {"json": {"score": 7.2}}]}
    }

``mode: "fixed"`` returns the remaining keys verbatim (e.g. ``{"mode":
"fixed", "score": 5.0}``).  A sequence sticks at its last entry once
exhausted.
"""

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .ids import content_digest

_ENDPOINTS = ("aesthetic", "caption", "ground")


def hash_uniform(digest, lo=0.0, hi=10.0):
    """Deterministic score in [lo, hi) from a content digest."""
    u = int.from_bytes(digest[:8], "big") / 2.0**64
    return lo + u * (hi - lo)


def hash_captions(digest):
    tag = digest.hex()[:8]
    return {
        "short": f"image {tag}",
        "detailed": f"a detailed description of image {tag} showing several distinct objects",
    }


def hash_boxes(digest, max_boxes=3):
    k = 1 + digest[0] % max_boxes
    boxes = []
    for j in range(k):
        b = digest[1 + 4 * j : 5 + 4 * j]
        x0 = b[0] / 255.0 * 0.6
        y0 = b[1] / 255.0 * 0.6
        boxes.append(
            {
                "x0": x0,
                "y0": y0,
                "x1": min(1.0, x0 + 0.1 + b[2] / 255.0 * 0.3),
                "y1": min(1.0, y0 + 0.1 + b[3] / 255.0 * 0.3),
                "phrase": f"object {j}",
                "confidence": 0.4 + b[3] / 255.0 * 0.55,
            }
        )
    return {"boxes": boxes}


class MockModelServer:
    """Localhost HTTP server speaking the annotation-shim protocol."""

    def __init__(self, fixtures=None, port=0):
        self.fixtures = fixtures or {}
        self._lock = threading.Lock()
        self.counts = {name: 0 for name in _ENDPOINTS}
        self._cursors = {name: 0 for name in _ENDPOINTS}
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output quiet
                pass

            def _reply(self, status, payload):
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/_log":
                    with server._lock:
                        counts = dict(server.counts)
                    self._reply(200, {"counts": counts, "total": sum(counts.values())})
                else:
                    self._reply(404, {"error": "unknown path"})

            def do_POST(self):
                if self.path == "/_reset":
                    server.reset()
                    self._reply(200, {"ok": True})
                    return
                name = self.path.lstrip("/")
                if name not in _ENDPOINTS:
                    self._reply(404, {"error": f"unknown endpoint {self.path}"})
                    return
                length = int(self.headers.get("Content-Length", 0))
                try:
                    request = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._reply(400, {"error": "bad JSON"})
                    return
                status, payload = server.respond(name, request)
                self._reply(status, payload)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self.httpd.daemon_threads = True
        self.port = self.httpd.server_address[1]
        self._thread = None

    @property
    def url(self):
        return f"http://127.0.0.1:{self.port}"

    @classmethod
    def from_fixture_file(cls, path, port=0):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), port=port)

    def reset(self):
        with self._lock:
            for name in _ENDPOINTS:
                self.counts[name] = 0
                self._cursors[name] = 0

    def respond(self, name, request):
        """(status, payload) for one request; also advances counters/cursors."""
        cfg = self.fixtures.get(name, {})
        with self._lock:
            self.counts[name] += 1
            cursor = self._cursors[name]
            sequence = cfg.get("sequence")
            if sequence:
                self._cursors[name] = min(cursor + 1, len(sequence) - 1)
        if sequence:
            item = sequence[min(cursor, len(sequence) - 1)]
            if "status" in item and item["status"] != 200:
                return item["status"], {"error": "scripted failure"}
            return 200, item.get("json", {k: v for k, v in item.items() if k != "status"})

        digest = content_digest(base64.b64decode(request.get("image", "")))
        mode = cfg.get("mode", {"aesthetic": "hash_uniform", "caption": "hash_text", "ground": "hash_boxes"}[name])
        if mode == "fixed":
            return 200, {k: v for k, v in cfg.items() if k != "mode"}

        if name == "aesthetic":
            override = cfg.get("overrides", {}).get(digest.hex())
            if override is not None:
                return 200, {"score": override}
            return 200, {"score": hash_uniform(digest, cfg.get("lo", 0.0), cfg.get("hi", 10.0))}
        if name == "caption":
            return 200, hash_captions(digest)
        if digest.hex() in cfg.get("empty_ids", []):
            return 200, {"boxes": []}
        return 200, hash_boxes(digest, cfg.get("max_boxes", 3))

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
