"""Pluggable answer backends: external child processes and test stubs.

The command backend talks line-delimited JSON (protocol v1) over a child's
stdin/stdout: one request line, one response line, strictly sequential. Any
transport fault (timeout, child exit, malformed line, wrong echo) degrades
to an empty raw answer, which downstream parsing classifies as Failure, and
the child is restarted for the next request. Stub backends answer without
any I/O and exist so the audit pipeline can be exercised end to end.

A backend instance is not thread-safe; give each worker its own.
"""

from __future__ import annotations

import json
import logging
import os
import select
import shlex
import subprocess
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

__all__ = [
    "PROTOCOL_VERSION",
    "DEFAULT_TIMEOUT",
    "PredictRequest",
    "PredictResponse",
    "Backend",
    "AlwaysNoBackend",
    "ThresholdBackend",
    "CommandBackend",
    "make_backend",
]

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 120.0


@dataclass(frozen=True)
class PredictRequest:
    """One question about one video, with the sampled frames by path.

    ``meta`` carries pipeline-side context (e.g. the mean instability score
    used by the threshold stub); it is never serialized onto the wire.
    """

    video_id: str
    category_id: str
    question: str
    frame_paths: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.frame_paths:
            raise ValueError("frame_paths must be non-empty")

    def wire_line(self) -> bytes:
        payload = {
            "v": PROTOCOL_VERSION,
            "video_id": self.video_id,
            "category_id": self.category_id,
            "question": self.question,
            "frames": list(self.frame_paths),
        }
        return json.dumps(payload, separators=(",", ":")).encode() + b"\n"


@dataclass(frozen=True)
class PredictResponse:
    """The raw answer for one request; empty string means transport failure."""

    video_id: str
    category_id: str
    raw_answer: str


class Backend(ABC):
    """Anything that can answer a PredictRequest."""

    @abstractmethod
    def predict(self, req: PredictRequest) -> PredictResponse: ...

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class AlwaysNoBackend(Backend):
    """Answers "no" to everything; the trivial smoke-test stub."""

    def predict(self, req: PredictRequest) -> PredictResponse:
        return PredictResponse(req.video_id, req.category_id, "no")


class ThresholdBackend(Backend):
    """Answers "yes" iff the request's mean instability score exceeds a bound.

    A smoke-test heuristic only: it looks at req.meta["mean_score"], not at
    the frames. Requests without that metadata answer "no".
    """

    def __init__(self, threshold: float):
        self.threshold = float(threshold)

    def predict(self, req: PredictRequest) -> PredictResponse:
        score = req.meta.get("mean_score")
        answer = "yes" if score is not None and score > self.threshold else "no"
        return PredictResponse(req.video_id, req.category_id, answer)


class CommandBackend(Backend):
    """Drives an external answerer over the v1 line protocol.

    The child is spawned lazily, fed one compact JSON request line per
    predict call, and must reply with one JSON line. On any fault the call
    returns an empty raw answer and the child is torn down so the next
    request starts fresh.
    """

    def __init__(self, argv: list[str], timeout: float = DEFAULT_TIMEOUT):
        if not argv:
            raise ValueError("command backend needs a command line")
        self.argv = list(argv)
        self.timeout = float(timeout)
        self._child: subprocess.Popen | None = None
        self._buf = b""

    def _ensure_child(self) -> subprocess.Popen:
        if self._child is None or self._child.poll() is not None:
            self._child = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                bufsize=0,
            )
            self._buf = b""
        return self._child

    def _read_line(self, child: subprocess.Popen, deadline: float) -> bytes:
        fd = child.stdout.fileno()
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError(f"no response within {self.timeout} s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise TimeoutError(f"no response within {self.timeout} s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise ConnectionError("child closed its output")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def _teardown(self) -> None:
        child, self._child = self._child, None
        self._buf = b""
        if child is None:
            return
        for stream in (child.stdin, child.stdout):
            if stream:
                try:
                    stream.close()
                except OSError:
                    pass
        if child.poll() is None:
            child.terminate()
            try:
                child.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                child.kill()
                child.wait()

    def predict(self, req: PredictRequest) -> PredictResponse:
        failed = PredictResponse(req.video_id, req.category_id, "")
        deadline = time.monotonic() + self.timeout
        try:
            child = self._ensure_child()
            child.stdin.write(req.wire_line())
            child.stdin.flush()
            line = self._read_line(child, deadline)
            obj = json.loads(line.decode("utf-8"))
            if not isinstance(obj, dict) or obj.get("v") != PROTOCOL_VERSION:
                raise ValueError(f"bad protocol envelope: {line[:200]!r}")
            if not isinstance(obj.get("raw_answer"), str):
                raise ValueError("response missing string raw_answer")
            if (obj.get("video_id"), obj.get("category_id")) != (
                req.video_id,
                req.category_id,
            ):
                raise ValueError(
                    f"echo mismatch: got {obj.get('video_id')!r}/"
                    f"{obj.get('category_id')!r}"
                )
            return PredictResponse(req.video_id, req.category_id, obj["raw_answer"])
        except Exception as exc:
            log.warning(
                "command backend failed for %s/%s: %s",
                req.video_id,
                req.category_id,
                exc,
            )
            self._teardown()
            return failed

    def close(self) -> None:
        self._teardown()


def make_backend(spec: str, timeout: float = DEFAULT_TIMEOUT) -> Backend:
    """Build a backend from its spec string.

    Formats: "always_no"; "threshold:<float>"; "command:<shell command>".
    """
    kind, _, rest = spec.partition(":")
    if kind == "always_no":
        return AlwaysNoBackend()
    if kind == "threshold":
        if not rest:
            raise ValueError("threshold backend needs a value, e.g. threshold:0.5")
        return ThresholdBackend(float(rest))
    if kind == "command":
        if not rest:
            raise ValueError("command backend needs a command line")
        return CommandBackend(shlex.split(rest), timeout=timeout)
    raise ValueError(
        f"unknown backend {spec!r}: expected always_no, threshold:<v>, or command:<cmd>"
    )
