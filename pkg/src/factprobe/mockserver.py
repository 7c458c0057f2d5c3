"""Fixture-driven mock chat-completion backend.

Serves /v1/chat/completions from a JSON fixture so the whole pipeline
can run offline and byte-reproducibly. Lookup is by the last user
message: exact string match first, then a hash of the normalized
prompt (lowercased, whitespace collapsed), then the fixture default.

Fixture document:

    {
      "serve_logprobs": true,
      "default": {"text": "unknown", "top_logprobs": [[["unknown", -1.56], ...]]},
      "entries": [
        {"match": {"mode": "exact", "prompt": "..."},
         "response": {"text": "...",
                      "top_logprobs": [[[token, logprob], ...], ...]}}
      ]
    }

top_logprobs is one list per generated token, each holding [token,
logprob] pairs best-first. Omit it and the entry serves no logprobs;
set serve_logprobs to false and the whole backend omits them, which is
how a logprob-less deployment is emulated.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .core import FactProbeError

_DEFAULT_TEXT = "unknown"
_DEFAULT_TOP_LOGPROBS = [[
    ["unknown", math.log(0.21)],
    ["unclear", math.log(0.20)],
    ["unsure", math.log(0.20)],
    ["none", math.log(0.20)],
    ["unstated", math.log(0.19)],
]]


class FixtureParseError(FactProbeError):
    """The fixture file is not a valid mock fixture."""


class PortInUse(FactProbeError):
    """The requested port is already bound."""


def normalize_prompt(prompt: str) -> str:
    return " ".join(prompt.lower().split())


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(normalize_prompt(prompt).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MockEntry:
    text: str
    top_logprobs: Optional[tuple] = None


@dataclass
class MockFixture:
    serve_logprobs: bool = True
    default: MockEntry = field(default_factory=lambda: MockEntry(
        _DEFAULT_TEXT, tuple(tuple(tuple(p) for p in pos) for pos in _DEFAULT_TOP_LOGPROBS)))
    exact: dict = field(default_factory=dict)
    hashed: dict = field(default_factory=dict)

    def lookup(self, prompt: str) -> MockEntry:
        if prompt in self.exact:
            return self.exact[prompt]
        return self.hashed.get(prompt_hash(prompt), self.default)


def _parse_entry(obj, where: str) -> MockEntry:
    if not isinstance(obj, dict) or "text" not in obj:
        raise FixtureParseError(f"{where}: response needs a 'text' field")
    text = obj["text"]
    if not isinstance(text, str):
        raise FixtureParseError(f"{where}: 'text' must be a string")
    tops = obj.get("top_logprobs")
    if tops is None:
        return MockEntry(text=text)
    if not isinstance(tops, list) or not tops:
        raise FixtureParseError(f"{where}: 'top_logprobs' must be a non-empty list")
    frozen = []
    for i, position in enumerate(tops):
        if not isinstance(position, list) or not position:
            raise FixtureParseError(f"{where}: token {i} must list [token, logprob] pairs")
        pairs = []
        for pair in position:
            if (not isinstance(pair, list) or len(pair) != 2
                    or not isinstance(pair[0], str)
                    or not isinstance(pair[1], (int, float))):
                raise FixtureParseError(f"{where}: token {i} has a malformed pair: {pair!r}")
            pairs.append((pair[0], float(pair[1])))
        frozen.append(tuple(pairs))
    return MockEntry(text=text, top_logprobs=tuple(frozen))


def load_fixture(path) -> MockFixture:
    """Parse a fixture file; FixtureParseError explains any rejection."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise FixtureParseError(f"cannot read fixture: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FixtureParseError(f"fixture is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FixtureParseError("fixture root must be a JSON object")

    fixture = MockFixture()
    if "serve_logprobs" in doc:
        if not isinstance(doc["serve_logprobs"], bool):
            raise FixtureParseError("'serve_logprobs' must be a boolean")
        fixture.serve_logprobs = doc["serve_logprobs"]
    if "default" in doc:
        fixture.default = _parse_entry(doc["default"], "default")
    entries = doc.get("entries", [])
    if not isinstance(entries, list):
        raise FixtureParseError("'entries' must be a list")
    for n, raw in enumerate(entries):
        where = f"entries[{n}]"
        if not isinstance(raw, dict):
            raise FixtureParseError(f"{where}: must be an object")
        match = raw.get("match")
        if not isinstance(match, dict) or "prompt" not in match:
            raise FixtureParseError(f"{where}: needs match.prompt")
        mode = match.get("mode", "exact")
        prompt = match["prompt"]
        if not isinstance(prompt, str):
            raise FixtureParseError(f"{where}: match.prompt must be a string")
        entry = _parse_entry(raw.get("response"), where)
        if mode == "exact":
            fixture.exact[prompt] = entry
        elif mode == "hash":
            fixture.hashed[prompt_hash(prompt)] = entry
        else:
            raise FixtureParseError(f"{where}: unknown match mode {mode!r}")
    return fixture


def _error_body(status: int, message: str) -> bytes:
    return json.dumps({"error": {"message": message, "code": status}},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")


class _Handler(BaseHTTPRequestHandler):
    server_version = "factprobe-mock/1.0"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output clean
        pass

    def _send(self, status: int, body: bytes):
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        if self.path != "/v1/chat/completions":
            self._send(404, _error_body(404, f"no such route: {self.path}"))
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            messages = body["messages"]
            prompt = next(m["content"] for m in reversed(messages) if m["role"] == "user")
        except (ValueError, KeyError, TypeError, StopIteration):
            self._send(400, _error_body(400, "malformed chat completion request"))
            return

        self.server.note_request()
        entry = self.server.fixture.lookup(prompt)
        want_logprobs = bool(body.get("logprobs"))
        logprobs_block = None
        if want_logprobs and self.server.fixture.serve_logprobs and entry.top_logprobs:
            logprobs_block = {"content": [
                {
                    "token": position[0][0],
                    "logprob": position[0][1],
                    "top_logprobs": [{"token": t, "logprob": lp} for t, lp in position],
                }
                for position in entry.top_logprobs
            ]}
        reply = {
            "id": "mockcmpl-" + prompt_hash(prompt)[:12],
            "object": "chat.completion",
            "created": 0,
            "model": body.get("model", "mock"),
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": entry.text},
                "logprobs": logprobs_block,
                "finish_reason": "stop",
            }],
            "usage": {
                "prompt_tokens": len(prompt.split()),
                "completion_tokens": len(entry.text.split()),
                "total_tokens": len(prompt.split()) + len(entry.text.split()),
            },
        }
        self._send(200, json.dumps(reply, sort_keys=True, separators=(",", ":")).encode("utf-8"))


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False

    def __init__(self, address, fixture: MockFixture):
        super().__init__(address, _Handler)
        self.fixture = fixture
        self._count_lock = threading.Lock()
        self._request_count = 0

    def note_request(self):
        with self._count_lock:
            self._request_count += 1

    @property
    def request_count(self) -> int:
        with self._count_lock:
            return self._request_count


class MockServer:
    """A mock backend bound to 127.0.0.1, serving one fixture.

    Use port 0 to grab any free port. start() returns once the socket
    is bound; stop() shuts the server down and joins its thread.
    """

    def __init__(self, fixture: MockFixture, port: int = 0):
        self.fixture = fixture
        self.requested_port = port
        self._server: Optional[_Server] = None
        self._thread: Optional[threading.Thread] = None

    @classmethod
    def from_file(cls, path, port: int = 0) -> "MockServer":
        return cls(load_fixture(path), port=port)

    def start(self) -> "MockServer":
        try:
            self._server = _Server(("127.0.0.1", self.requested_port), self.fixture)
        except OSError as exc:
            raise PortInUse(f"cannot bind 127.0.0.1:{self.requested_port}: {exc}") from exc
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="factprobe-mock", daemon=True)
        self._thread.start()
        return self

    @property
    def port(self) -> int:
        if self._server is None:
            raise RuntimeError("server is not running")
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    @property
    def request_count(self) -> int:
        if self._server is None:
            return 0
        return self._server.request_count

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc_info):
        self.stop()
