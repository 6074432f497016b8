"""Deterministic stub servers for the embedding and judge wire contracts.

The embed stub answers POST /embed with toy-embedder vectors (or a
configured failure status); the judge stub answers chat-completions POSTs
by delegating to the same rule table the in-process mock judges use, so
the HTTP path and the in-process path cannot drift. Both are stateless:
responses are pure functions of (mode, seed, request body).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .embedder import DEFAULT_TOY_DIM, embed_toy
from .judge import judge_reply

EMBED_MODES = ("toy-embed", "fail-with-status")
JUDGE_MODES = ("fixed-score", "prefer-longer", "prefer-shorter",
               "prefer-lexical-overlap", "garbage")


@dataclass(frozen=True)
class StubBehavior:
    mode: str = "toy-embed"
    seed: int = 0
    fail_status: int = 500
    dim: int = DEFAULT_TOY_DIM


class _StubHandler(BaseHTTPRequestHandler):
    behavior: StubBehavior
    kind: str  # "embed" or "judge"
    stats: dict

    def log_message(self, fmt, *args):  # silence per-request stderr noise
        pass

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        return json.loads(self.rfile.read(length).decode("utf-8"))

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        with self.server.stats_lock:
            self.stats["requests"] += 1
            self.stats["paths"].append(self.path)
            self.stats["auth_headers"].append(self.headers.get("Authorization"))
        try:
            payload = self._read_json()
        except (ValueError, KeyError):
            self._send(400, {"error": "bad json"})
            return

        behavior = self.behavior
        if self.kind == "embed":
            if behavior.mode == "fail-with-status":
                self._send(behavior.fail_status, {"error": "configured failure"})
                return
            texts = payload.get("texts")
            if not isinstance(texts, list):
                self._send(400, {"error": "texts must be a list"})
                return
            with self.server.stats_lock:
                self.stats["batch_sizes"].append(len(texts))
            vectors = [embed_toy(t, behavior.dim).tolist() for t in texts]
            self._send(200, {"embeddings": vectors, "dim": behavior.dim})
            return

        # judge: chat-completions shape in, assistant message out
        try:
            prompt = payload["messages"][-1]["content"]
        except (KeyError, IndexError, TypeError):
            self._send(400, {"error": "chat-completions payload expected"})
            return
        reply = judge_reply(behavior.mode, prompt, behavior.seed)
        self._send(200, {
            "model": payload.get("model", "stub"),
            "choices": [{"index": 0, "message": {"role": "assistant",
                                                 "content": reply}}],
        })


class StubServer:
    """A running stub on 127.0.0.1; use as a context manager in tests.

    stats counts requests and records per-request batch sizes.
    """

    def __init__(self, kind: str, behavior: StubBehavior, port: int = 0):
        if kind not in ("embed", "judge"):
            raise ValueError(f"kind must be embed or judge, got {kind!r}")
        self.kind = kind
        self.behavior = behavior
        self.stats = {"requests": 0, "batch_sizes": [], "paths": [],
                      "auth_headers": []}
        handler = type("Handler", (_StubHandler,), {
            "behavior": behavior, "kind": kind, "stats": self.stats})
        self._server = ThreadingHTTPServer(("127.0.0.1", port), handler)
        self._server.stats_lock = threading.Lock()
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True)

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    @property
    def judge_url(self) -> str:
        return f"{self.base_url}/v1/chat/completions"

    def start(self) -> "StubServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_embed(behavior: StubBehavior, port: int = 0) -> StubServer:
    """Stub implementing the /embed wire contract. Returns it running."""
    return StubServer("embed", behavior, port).start()


def serve_judge(behavior: StubBehavior, port: int = 0) -> StubServer:
    """Stub implementing the judge wire contract. Returns it running."""
    return StubServer("judge", behavior, port).start()


def run_forever(kind: str, behavior: StubBehavior, port: int) -> None:
    """Blocking variant for the CLI's serve subcommand."""
    server = StubServer(kind, behavior, port)
    print(f"serving {kind} stub (mode={behavior.mode}) on {server.base_url}")
    try:
        server._server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
