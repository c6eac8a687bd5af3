"""Offline mock of an OpenAI-compatible endpoint.

Serves chat completions from a prompt -> completion fixture table (exact
match on the last user message, with an optional default), plus
deterministic hash-derived vectors on /v1/embeddings for testing the
external-embedding similarity mode. Runs in-process for tests or
standalone via `python -m threatlog.mock_server fixture.json`.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path


@dataclass
class Fixture:
    responses: dict[str, str]
    default: str | None = None
    status_overrides: dict[str, int] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "Fixture":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            responses=payload.get("responses", {}),
            default=payload.get("default"),
            status_overrides=payload.get("status_overrides", {}),
        )

    def save(self, path: str | Path) -> None:
        payload = {
            "responses": self.responses,
            "default": self.default,
            "status_overrides": self.status_overrides,
        }
        Path(path).write_text(
            json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8",
        )


def _embedding_for(text: str, dim: int = 32) -> list[float]:
    # deterministic pseudo-embedding: bytes of repeated sha256
    out: list[float] = []
    counter = 0
    while len(out) < dim:
        digest = hashlib.sha256(f"{counter}:{text}".encode("utf-8")).digest()
        out.extend(b / 255.0 for b in digest)
        counter += 1
    return out[:dim]


class _Handler(BaseHTTPRequestHandler):
    server: "MockHTTPServer"

    def log_message(self, fmt, *args):  # silence default stderr logging
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._send_json(400, {"error": "invalid JSON"})
            return
        self.server.count_request(self.path)

        if self.path == "/v1/chat/completions":
            user = ""
            for message in payload.get("messages", []):
                if message.get("role") == "user":
                    user = message.get("content", "")
            fixture = self.server.fixture
            status = fixture.status_overrides.get(user)
            if status:
                self._send_json(status, {"error": f"forced status {status}"})
                return
            completion = fixture.responses.get(user, fixture.default)
            if completion is None:
                self._send_json(404, {"error": "no fixture entry for prompt"})
                return
            self._send_json(
                200,
                {
                    "object": "chat.completion",
                    "model": payload.get("model", "mock"),
                    "choices": [
                        {
                            "index": 0,
                            "message": {"role": "assistant", "content": completion},
                            "finish_reason": "stop",
                        }
                    ],
                },
            )
        elif self.path == "/v1/embeddings":
            inputs = payload.get("input", [])
            if isinstance(inputs, str):
                inputs = [inputs]
            self._send_json(
                200,
                {
                    "object": "list",
                    "data": [
                        {"object": "embedding", "index": i, "embedding": _embedding_for(t)}
                        for i, t in enumerate(inputs)
                    ],
                },
            )
        else:
            self._send_json(404, {"error": f"unknown path {self.path}"})


class MockHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, fixture: Fixture):
        super().__init__(address, _Handler)
        self.fixture = fixture
        self._lock = threading.Lock()
        self.request_counts: dict[str, int] = {}

    def count_request(self, path: str) -> None:
        with self._lock:
            self.request_counts[path] = self.request_counts.get(path, 0) + 1


class MockEndpoint:
    """In-process mock server for tests and offline runs.

    Usage: `with MockEndpoint(fixture) as url: ...`
    """

    def __init__(self, fixture: Fixture, host: str = "127.0.0.1", port: int = 0):
        self._server = MockHTTPServer((host, port), fixture)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def request_counts(self) -> dict[str, int]:
        return dict(self._server.request_counts)

    def __enter__(self) -> str:
        self._thread.start()
        return self.url

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)


def main(argv: list[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Serve a mock chat-completions endpoint")
    parser.add_argument("fixture", help="JSON fixture with prompt -> completion table")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8089)
    args = parser.parse_args(argv)

    server = MockHTTPServer((args.host, args.port), Fixture.load(args.fixture))
    print(f"mock endpoint listening on http://{args.host}:{args.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
