"""Shared domain types and their JSON encodings."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

MAP_SIZE = 1 << 16
ALLOWED_SHOTS = (0, 1, 3)


def digest(data: bytes) -> str:
    """SHA-256 of ``data`` as 64 lowercase hex characters."""
    return hashlib.sha256(data).hexdigest()


class Origin(str, enum.Enum):
    SEED = "Seed"
    BUILTIN = "Builtin"
    LLM = "Llm"


class ProbeClass(str, enum.Enum):
    FUNCTION = "function"
    LINE = "line"
    BRANCH = "branch"
    REGION = "region"


PROBE_CLASSES = tuple(ProbeClass)


class Status(str, enum.Enum):
    OK = "Ok"
    CRASH = "Crash"
    HANG = "Hang"


class QueryStatus(str, enum.Enum):
    OK = "Ok"
    TIMEOUT = "Timeout"
    FORMAT_MISMATCH = "FormatMismatch"
    HEX_ERROR = "HexError"
    EMPTY = "Empty"


# AFL count classes: every raw hit count maps to exactly one bit.
def _bucket_table() -> bytes:
    table = bytearray(256)
    for n in range(256):
        if n == 0:
            b = 0
        elif n <= 3:
            b = 1 << (n - 1)
        elif n <= 7:
            b = 8
        elif n <= 15:
            b = 16
        elif n <= 31:
            b = 32
        elif n <= 127:
            b = 64
        else:
            b = 128
        table[n] = b
    return bytes(table)


BUCKETS = _bucket_table()


def bucket(count: int) -> int:
    return BUCKETS[count if count < 256 else 255]


@dataclass(frozen=True)
class TestCase:
    id: int
    payload: bytes
    origin: Origin
    parent_id: Optional[int] = None
    discovered_at: int = 0

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self) -> None:
        if not isinstance(self.payload, bytes):
            object.__setattr__(self, "payload", bytes(self.payload))
        if (self.origin is Origin.SEED) != (self.parent_id is None):
            raise ValueError("origin Seed iff parent_id is absent")

    @property
    def filename(self) -> str:
        src = "none" if self.parent_id is None else f"{self.parent_id:06d}"
        return f"id{self.id:06d}_src{src}_{self.origin.value.lower()}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "payload": self.payload.hex(),
            "origin": self.origin.value,
            "parent_id": self.parent_id,
            "discovered_at": self.discovered_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TestCase":
        return cls(
            id=int(d["id"]),
            payload=bytes.fromhex(d["payload"]),
            origin=Origin(d["origin"]),
            parent_id=d.get("parent_id"),
            discovered_at=int(d.get("discovered_at", 0)),
        )


@dataclass(frozen=True)
class ExecutionOutcome:
    status: Status
    probes: frozenset = frozenset()
    edges: Mapping[int, int] = field(default_factory=dict)
    exec_time: int = 0  # ns
    classification_detail: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "probes": sorted([c.value, p] for c, p in self.probes),
            "edges": {str(k): v for k, v in sorted(self.edges.items())},
            "exec_time": self.exec_time,
            "classification_detail": self.classification_detail,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExecutionOutcome":
        return cls(
            status=Status(d["status"]),
            probes=frozenset((ProbeClass(c), int(p)) for c, p in d["probes"]),
            edges={int(k): int(v) for k, v in d["edges"].items()},
            exec_time=int(d["exec_time"]),
            classification_detail=d.get("classification_detail"),
        )


class CoverageMap:
    """Virgin-style edge bitmap plus per-class covered probe sets.

    ``edge_bitmap[i]`` holds the OR of every count-class bit seen at edge ``i``.
    """

    def __init__(self, totals: Mapping[ProbeClass, int]):
        for cls, n in totals.items():
            if n <= 0:
                raise ValueError(f"probe total for {cls.value} must be positive")
        self.totals = dict(totals)
        self.edge_bitmap = bytearray(MAP_SIZE)
        self.covered: dict[ProbeClass, set[int]] = {c: set() for c in self.totals}
        self._seen: set = set()

    def is_novel(self, edges: Mapping[int, int], probes: Iterable) -> bool:
        bitmap = self.edge_bitmap
        for idx, count in edges.items():
            if BUCKETS[count if count < 256 else 255] & ~bitmap[idx]:
                return True
        return not self._seen.issuperset(probes)

    def update(self, edges: Mapping[int, int], probes: Iterable) -> bool:
        """Merge one run into the map; returns whether anything was new."""
        new = False
        bitmap = self.edge_bitmap
        for idx, count in edges.items():
            b = BUCKETS[count if count < 256 else 255]
            if b & ~bitmap[idx]:
                bitmap[idx] |= b
                new = True
        for key in probes:
            if key not in self._seen:
                cls, pid = key
                if cls not in self.covered:
                    raise KeyError(f"probe class {cls} not declared by target")
                if len(self.covered[cls]) >= self.totals[cls]:
                    raise ValueError(f"more {cls.value} probes hit than declared")
                self._seen.add(key)
                self.covered[cls].add(pid)
                new = True
        return new

    def percent(self, cls: ProbeClass) -> float:
        return 100.0 * len(self.covered[cls]) / self.totals[cls]

    def copy(self) -> "CoverageMap":
        other = CoverageMap(self.totals)
        other.edge_bitmap[:] = self.edge_bitmap
        other.covered = {c: set(s) for c, s in self.covered.items()}
        other._seen = set(self._seen)
        return other

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CoverageMap):
            return NotImplemented
        return (
            self.totals == other.totals
            and self.edge_bitmap == other.edge_bitmap
            and self.covered == other.covered
        )

    def to_dict(self) -> dict:
        return {
            "totals": {c.value: n for c, n in self.totals.items()},
            "covered": {c.value: sorted(s) for c, s in self.covered.items()},
            "edge_bitmap": {str(i): b for i, b in enumerate(self.edge_bitmap) if b},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CoverageMap":
        cmap = cls({ProbeClass(c): int(n) for c, n in d["totals"].items()})
        for c, ids in d["covered"].items():
            pc = ProbeClass(c)
            cmap.covered[pc] = set(ids)
            cmap._seen.update((pc, i) for i in ids)
        for i, b in d["edge_bitmap"].items():
            cmap.edge_bitmap[int(i)] = b
        return cmap


@dataclass(frozen=True)
class QueryLogRecord:
    seq: int
    benchmark: str
    shot: int
    input_digest: str
    status: QueryStatus
    final_output_digest: Optional[str] = None
    latency_ms: float = 0.0
    duplicate: bool = False

    def __post_init__(self) -> None:
        if (self.status is QueryStatus.OK) != (self.final_output_digest is not None):
            raise ValueError("final_output_digest present iff status is Ok")

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "benchmark": self.benchmark,
            "shot": self.shot,
            "input_digest": self.input_digest,
            "status": self.status.value,
            "final_output_digest": self.final_output_digest,
            "latency_ms": self.latency_ms,
            "duplicate": self.duplicate,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "QueryLogRecord":
        return cls(
            seq=int(d["seq"]),
            benchmark=str(d["benchmark"]),
            shot=int(d["shot"]),
            input_digest=str(d["input_digest"]),
            status=QueryStatus(d["status"]),
            final_output_digest=d.get("final_output_digest"),
            latency_ms=float(d.get("latency_ms", 0.0)),
            duplicate=bool(d.get("duplicate", False)),
        )


class BackendKind(str, enum.Enum):
    HTTP_CHAT = "http"
    MOCK_IDENTITY = "mock-identity"
    MOCK_MUTATOR = "mock-mutator"
    MOCK_CHAOS = "mock-chaos"


@dataclass(frozen=True)
class BackendDescriptor:
    kind: BackendKind = BackendKind.MOCK_IDENTITY
    endpoint: Optional[str] = None
    model: Optional[str] = None
    temperature: float = 0.0
    request_timeout: float = 60.0
    rng_seed: int = 0
    timeout_rate: float = 0.35
    mismatch_rate: float = 0.05
    oddhex_rate: float = 0.05
    dup_rate: float = 0.2

    def validate(self) -> None:
        for name in ("timeout_rate", "mismatch_rate", "oddhex_rate", "dup_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(name.replace("_", "-"), f"must be in [0, 1], got {v}")
        if self.timeout_rate + self.mismatch_rate + self.oddhex_rate > 1.0 + 1e-12:
            raise ConfigError("timeout-rate", "timeout, mismatch and oddhex rates sum to more than 1")
        if self.temperature < 0:
            raise ConfigError("temperature", "must be >= 0")
        if self.request_timeout < 0:
            raise ConfigError("request-timeout", "must be >= 0")
        if self.kind is BackendKind.HTTP_CHAT and not (self.endpoint and self.model):
            raise ConfigError("backend", "http backend needs an endpoint URL and a model")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "endpoint": self.endpoint,
            "model": self.model,
            "temperature": self.temperature,
            "request_timeout": self.request_timeout,
            "rng_seed": self.rng_seed,
            "timeout_rate": self.timeout_rate,
            "mismatch_rate": self.mismatch_rate,
            "oddhex_rate": self.oddhex_rate,
            "dup_rate": self.dup_rate,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BackendDescriptor":
        d = dict(d)
        d["kind"] = BackendKind(d["kind"])
        return cls(**d)


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class CampaignConfig:
    target: str = "chunkfmt"
    target_command: Optional[tuple] = None  # ExternalCommand adapters only
    duration: float = 60.0
    shots: int = 0
    seed_dir: Optional[Path] = None  # None: the target's bundled seeds
    rng_seed: int = 0
    broker: str = "inprocess"  # "none" | "inprocess" | "host:port"
    backend: BackendDescriptor = field(default_factory=BackendDescriptor)
    poll_timeout: float = 0.0
    hang_budget: float = 0.1
    split_threshold: int = 2000
    temperature: float = 0.0
    max_execs: Optional[int] = None
    deterministic_time: bool = False

    def validate(self) -> None:
        if self.shots not in ALLOWED_SHOTS:
            raise ConfigError("shots", f"must be one of {{0,1,3}}, got {self.shots}")
        if self.split_threshold <= 0:
            raise ConfigError("split-threshold", "must be > 0")
        if self.temperature < 0:
            raise ConfigError("temperature", "must be >= 0")
        if self.duration < 0:
            raise ConfigError("duration", "must be >= 0")
        if self.poll_timeout < 0:
            raise ConfigError("poll-timeout", "must be >= 0")
        if self.hang_budget <= 0:
            raise ConfigError("hang-budget", "must be > 0")
        if self.max_execs is not None and self.max_execs < 0:
            raise ConfigError("max-execs", "must be >= 0")
        if self.seed_dir is not None and not Path(self.seed_dir).is_dir():
            raise ConfigError("seed-dir", f"not a directory: {self.seed_dir}")
        if self.broker not in ("none", "inprocess"):
            parse_hostport(self.broker)
        self.backend.validate()

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "target_command": list(self.target_command) if self.target_command else None,
            "duration": self.duration,
            "shots": self.shots,
            "seed_dir": str(self.seed_dir) if self.seed_dir is not None else None,
            "rng_seed": self.rng_seed,
            "broker": self.broker,
            "backend": self.backend.to_dict(),
            "poll_timeout": self.poll_timeout,
            "hang_budget": self.hang_budget,
            "split_threshold": self.split_threshold,
            "temperature": self.temperature,
            "max_execs": self.max_execs,
            "deterministic_time": self.deterministic_time,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CampaignConfig":
        d = dict(d)
        d["backend"] = BackendDescriptor.from_dict(d["backend"])
        if d.get("seed_dir") is not None:
            d["seed_dir"] = Path(d["seed_dir"])
        if d.get("target_command") is not None:
            d["target_command"] = tuple(d["target_command"])
        return cls(**d)


def parse_hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise ConfigError("broker", f"expected none, inprocess or host:port, got {text!r}")
    return host, int(port)
