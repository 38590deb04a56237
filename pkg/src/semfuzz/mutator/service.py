from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Optional

from semfuzz.broker.base import C2P, LIBRARY_INFO, P2C, Broker, Disconnected
from semfuzz.clock import WallClock
from semfuzz.model import QueryLogRecord, QueryStatus, digest
from semfuzz.mutator.backends import Backend
from semfuzz.mutator.codec import DEFAULT_SPLIT_THRESHOLD, hex_encode, normalize_hex, recombine, split_buffer
from semfuzz.mutator.prompts import Example, PromptTemplates, build_prompt, default_templates

log = logging.getLogger(__name__)

RECONNECT_BASE = 0.1
RECONNECT_CAP = 5.0
HARVEST_LIMIT = 3


class JsonlLogSink:
    """Append-only QueryLogRecord sink; assigns ``seq`` and serialises writers."""

    def __init__(self, path: Optional[Path] = None, keep: bool = True):
        self.path = Path(path) if path is not None else None
        self.keep = keep
        self.records: list[QueryLogRecord] = []
        self._lock = threading.Lock()
        self._seq = 0
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists():
                self._seq = _last_seq(self.path) + 1
            self._fh = self.path.open("a", encoding="utf-8")

    def append(self, **fields) -> QueryLogRecord:
        with self._lock:
            rec = QueryLogRecord(seq=self._seq, **fields)
            self._seq += 1
            if self.keep:
                self.records.append(rec)
            if self._fh is not None:
                self._fh.write(json.dumps(rec.to_dict(), sort_keys=False) + "\n")
                self._fh.flush()
            return rec

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def _last_seq(path: Path) -> int:
    last = -1
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            try:
                last = max(last, int(json.loads(line)["seq"]))
            except (ValueError, KeyError, TypeError):
                continue
    return last


class MutationService:
    """Consumes C2P, asks the backend for a mutation, publishes valid results to P2C."""

    def __init__(
        self,
        broker: Broker,
        backend: Backend,
        shot: int,
        benchmark: str,
        log_sink: Optional[JsonlLogSink] = None,
        split_threshold: int = DEFAULT_SPLIT_THRESHOLD,
        templates: Optional[PromptTemplates] = None,
        example_pool: Optional[list[Example]] = None,
        clock=None,
        harvest_dir: Optional[Path] = None,
    ):
        self.broker = broker
        self.backend = backend
        self.shot = shot
        self.benchmark = benchmark
        self.sink = log_sink if log_sink is not None else JsonlLogSink()
        self.split_threshold = split_threshold
        self.templates = templates or default_templates()
        self.example_pool = example_pool
        self.clock = clock or WallClock()
        self.harvest_dir = Path(harvest_dir) if harvest_dir is not None else None
        self.harvested = 0
        self.pushed = 0
        self._warned_no_context = False

    def library_info(self) -> str:
        raw = self.broker.get(LIBRARY_INFO)
        if raw is None:
            if not self._warned_no_context:
                log.warning("no %s in broker; prompting with empty context", LIBRARY_INFO)
                self._warned_no_context = True
            return ""
        return raw.decode("utf-8", "replace")

    def process(self, payload: bytes) -> QueryLogRecord:
        split = split_buffer(payload, self.split_threshold)
        prompt = build_prompt(
            hex_encode(split.head),
            self.library_info(),
            self.shot,
            self.example_pool,
            self.templates,
        )
        resp = self.backend.query(prompt)
        final_digest = None
        if resp.status is QueryStatus.OK:
            self.broker.push(P2C, recombine(split, resp.payload))
            self.pushed += 1
            final_digest = digest(normalize_hex(resp.final_output_hex).encode())
            self._harvest(resp)
        return self.sink.append(
            benchmark=self.benchmark,
            shot=self.shot,
            input_digest=digest(split.head),
            status=resp.status,
            final_output_digest=final_digest,
            latency_ms=resp.latency * 1000.0,
        )

    def step(self, timeout: Optional[float] = 0.0) -> Optional[QueryLogRecord]:
        """Handle at most one C2P message."""
        payload = self.broker.pop(C2P, timeout)
        if payload is None:
            return None
        return self.process(payload)

    def run(self, stop: threading.Event, poll: float = 0.05) -> None:
        delay = RECONNECT_BASE
        while not stop.is_set():
            try:
                self.step(poll)
                delay = RECONNECT_BASE
            except Disconnected as e:
                if stop.is_set():
                    break
                log.warning("broker unavailable (%s); retrying in %.1fs", e, delay)
                stop.wait(delay)
                delay = min(delay * 2, RECONNECT_CAP)
                try:
                    self.broker.reconnect()
                except Disconnected:
                    pass

    def _harvest(self, resp) -> None:
        if self.harvest_dir is None or self.harvested >= HARVEST_LIMIT:
            return
        self.harvest_dir.mkdir(parents=True, exist_ok=True)
        self.harvested += 1
        text = Example(resp.analysis or "", normalize_hex(resp.final_output_hex)).render()
        (self.harvest_dir / f"harvested-{self.harvested:02d}.txt").write_text(text + "\n", encoding="utf-8")


def service_loop(broker, backend, shot, log_sink, stop, benchmark="unknown", **kwargs) -> MutationService:
    svc = MutationService(broker, backend, shot, benchmark, log_sink, **kwargs)
    svc.run(stop)
    return svc
