"""Execution of payloads against instrumented targets."""

from __future__ import annotations

import enum
import os
import signal
import subprocess
import tempfile
import time
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from semfuzz.model import MAP_SIZE, PROBE_CLASSES, ExecutionOutcome, ProbeClass, Status

PROBE_ENV = "SEMFUZZ_PROBE_OUT"


class TargetLoadError(RuntimeError):
    pass


class TargetCrash(Exception):
    """Raised by in-process targets to signal a planted bug."""


class HangDetected(BaseException):
    # BaseException so a target's own ``except Exception`` cannot swallow it.
    pass


def edge_index(prev_loc: int, cur_loc: int) -> int:
    return ((prev_loc >> 1) ^ cur_loc) % MAP_SIZE


def probe_loc(cls: ProbeClass, pid: int) -> int:
    """Static 16-bit location for a probe, used by the edge scheme."""
    h = ((pid + 1) * 0x9E3779B1 + (PROBE_CLASSES.index(cls) + 1) * 0x85EBCA6B) & 0xFFFFFFFF
    h ^= h >> 15
    h = (h * 0x2C1B3C6D) & 0xFFFFFFFF
    h ^= h >> 12
    return h & 0xFFFF


class Probe:
    __slots__ = ("key", "loc")

    def __init__(self, cls: ProbeClass, pid: int):
        self.key = (cls, pid)
        self.loc = probe_loc(cls, pid)

    def __repr__(self) -> str:
        return f"Probe({self.key[0].value}:{self.key[1]})"


class ProbeTable:
    """Allocates probe ids per class at import time of a target module."""

    def __init__(self) -> None:
        self._next = {c: 0 for c in PROBE_CLASSES}
        self.names: dict[tuple, str] = {}

    def new(self, cls: ProbeClass, name: str) -> Probe:
        pid = self._next[cls]
        self._next[cls] += 1
        p = Probe(cls, pid)
        self.names[p.key] = name
        return p

    def function(self, name: str) -> Probe:
        return self.new(ProbeClass.FUNCTION, name)

    def line(self, name: str) -> Probe:
        return self.new(ProbeClass.LINE, name)

    def branch(self, name: str) -> Probe:
        return self.new(ProbeClass.BRANCH, name)

    def region(self, name: str) -> Probe:
        return self.new(ProbeClass.REGION, name)

    @property
    def totals(self) -> dict[ProbeClass, int]:
        return dict(self._next)

    def by_name(self, name: str) -> tuple:
        for key, n in self.names.items():
            if n == name:
                return key
        raise KeyError(name)


TICKS_PER_SECOND = 1_000_000


class Collector:
    """Per-execution probe set and edge hit counts."""

    __slots__ = ("probes", "edges", "_prev", "deadline", "tick_limit", "_ticks")

    def __init__(self) -> None:
        self.reset()

    def reset(self, deadline: float = float("inf"), tick_limit: Optional[int] = None) -> None:
        self.probes: set = set()
        self.edges: dict[int, int] = {}
        self._prev = 0
        self.deadline = deadline
        self.tick_limit = tick_limit
        self._ticks = 0

    def hit(self, probe: Probe) -> None:
        self.probes.add(probe.key)
        idx = (self._prev >> 1) ^ probe.loc
        edges = self.edges
        edges[idx] = edges.get(idx, 0) + 1
        self._prev = probe.loc

    def register(self, cls: ProbeClass, pid: int) -> None:
        self.probes.add((cls, pid))
        loc = probe_loc(cls, pid)
        idx = edge_index(self._prev, loc)
        self.edges[idx] = self.edges.get(idx, 0) + 1
        self._prev = loc

    @property
    def edge_hits(self) -> int:
        return sum(self.edges.values())

    def tick(self) -> None:
        """Called from target loops so runaway executions can be stopped."""
        self._ticks += 1
        if self._ticks & 0xFF == 0:
            if self.tick_limit is not None and self._ticks >= self.tick_limit:
                raise HangDetected
            if time.perf_counter() > self.deadline:
                raise HangDetected


_active: Optional[Collector] = None


def register_probe(cls: ProbeClass, pid: int) -> None:
    if _active is None:
        raise RuntimeError("register_probe called outside a target execution")
    _active.register(cls, pid)


class AdapterKind(str, enum.Enum):
    IN_PROCESS = "InProcess"
    EXTERNAL_COMMAND = "ExternalCommand"


class TargetAdapter:
    name: str
    kind: AdapterKind
    probe_totals: dict[ProbeClass, int]
    library_info: str = ""
    dictionary: Sequence[bytes] = ()

    def execute(self, payload: bytes, hang_budget: float) -> ExecutionOutcome:
        raise NotImplementedError

    def seeds(self) -> list[tuple[str, bytes]]:
        return []


class InProcessTarget(TargetAdapter):
    kind = AdapterKind.IN_PROCESS

    def __init__(
        self,
        name: str,
        fn: Callable[[bytes, Collector], None],
        probes: ProbeTable,
        seed_dir: Optional[Path] = None,
        library_info: str = "",
        dictionary: Sequence[bytes] = (),
        wall_clock_hangs: bool = True,
    ):
        totals = probes.totals
        if any(n <= 0 for n in totals.values()):
            raise TargetLoadError(f"{name}: every probe class needs at least one probe")
        self.name = name
        self.fn = fn
        self.probe_table = probes
        self.probe_totals = totals
        self.seed_dir = seed_dir
        self.library_info = library_info
        self.dictionary = tuple(dictionary)
        # When False, only cooperative hang detection applies, so outcomes do
        # not depend on scheduler noise.
        self.wall_clock_hangs = wall_clock_hangs
        self._collector = Collector()

    def execute(self, payload: bytes, hang_budget: float) -> ExecutionOutcome:
        global _active
        col = self._collector
        start = time.perf_counter()
        # without wall-clock hangs, loop iterations stand in for time
        limit = None if self.wall_clock_hangs else max(256, int(hang_budget * TICKS_PER_SECOND))
        col.reset(start + hang_budget, limit)
        _active = col
        status, detail = Status.OK, None
        try:
            self.fn(payload, col)
        except HangDetected:
            status, detail = Status.HANG, f"exceeded {hang_budget * 1000:g}ms"
        except TargetCrash as e:
            status, detail = Status.CRASH, str(e) or "TargetCrash"
        except RecursionError:
            status, detail = Status.CRASH, "stack exhaustion"
        except Exception as e:  # any trapped fault counts as a crash
            status, detail = Status.CRASH, type(e).__name__
        finally:
            _active = None
        elapsed = time.perf_counter() - start
        if status is Status.HANG:
            elapsed = max(elapsed, hang_budget)
        elif status is Status.OK and self.wall_clock_hangs and elapsed >= hang_budget:
            status, detail = Status.HANG, f"exceeded {hang_budget * 1000:g}ms"
        return ExecutionOutcome(
            status=status,
            probes=frozenset(col.probes),
            edges=col.edges,
            exec_time=int(elapsed * 1e9),
            classification_detail=detail,
        )

    def seeds(self) -> list[tuple[str, bytes]]:
        if self.seed_dir is None:
            return []
        return read_seed_dir(self.seed_dir)


def read_seed_dir(path: Path) -> list[tuple[str, bytes]]:
    return [(p.name, p.read_bytes()) for p in sorted(Path(path).iterdir()) if p.is_file()]


def parse_probe_report(text: str) -> set:
    """Parse newline-delimited ``class:id`` pairs."""
    probes = set()
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        cls, _, pid = line.partition(":")
        probes.add((ProbeClass(cls), int(pid)))
    return probes


def format_probe_report(probes) -> str:
    return "".join(f"{c.value}:{p}\n" for c, p in sorted(probes, key=lambda k: (k[0].value, k[1])))


class ExternalCommandTarget(TargetAdapter):
    """Runs a command per payload; ``@@`` in argv is replaced by an input file path."""

    kind = AdapterKind.EXTERNAL_COMMAND

    def __init__(
        self,
        name: str,
        argv: Sequence[str],
        probe_totals: Mapping[ProbeClass, int],
        seed_dir: Optional[Path] = None,
    ):
        if not argv:
            raise TargetLoadError(f"{name}: empty command")
        if any(n <= 0 for n in probe_totals.values()):
            raise TargetLoadError(f"{name}: probe totals must be positive")
        self.name = name
        self.argv = list(argv)
        self.probe_totals = dict(probe_totals)
        self.seed_dir = seed_dir
        self._workdir = Path(tempfile.mkdtemp(prefix="semfuzz-ext-"))
        self._checked = False

    def _check(self) -> None:
        exe = self.argv[0]
        if os.sep in exe:
            ok = os.access(exe, os.X_OK)
        else:
            import shutil

            ok = shutil.which(exe) is not None
        if not ok:
            raise TargetLoadError(f"{self.name}: cannot execute {exe}")
        self._checked = True

    def execute(self, payload: bytes, hang_budget: float) -> ExecutionOutcome:
        if not self._checked:
            self._check()
        report = self._workdir / "probes.txt"
        report.unlink(missing_ok=True)
        input_file = self._workdir / "input"
        use_file = "@@" in self.argv
        if use_file:
            input_file.write_bytes(payload)
        argv = [str(input_file) if a == "@@" else a for a in self.argv]
        env = dict(os.environ, **{PROBE_ENV: str(report)})
        start = time.perf_counter()
        status, detail = Status.OK, None
        try:
            proc = subprocess.run(
                argv,
                input=None if use_file else payload,
                stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL,
                env=env,
                timeout=hang_budget,
            )
            if proc.returncode < 0:
                status = Status.CRASH
                try:
                    detail = signal.Signals(-proc.returncode).name
                except ValueError:
                    detail = f"signal {-proc.returncode}"
        except subprocess.TimeoutExpired:
            status, detail = Status.HANG, f"exceeded {hang_budget * 1000:g}ms"
        elapsed = time.perf_counter() - start
        if status is Status.HANG:
            elapsed = max(elapsed, hang_budget)
        probes: set = set()
        if report.exists():
            probes = parse_probe_report(report.read_text())
        edges: dict[int, int] = {}
        prev = 0
        for cls, pid in sorted(probes, key=lambda k: (k[0].value, k[1])):
            loc = probe_loc(cls, pid)
            idx = edge_index(prev, loc)
            edges[idx] = edges.get(idx, 0) + 1
            prev = loc
        return ExecutionOutcome(status, frozenset(probes), edges, int(elapsed * 1e9), detail)

    def seeds(self) -> list[tuple[str, bytes]]:
        return read_seed_dir(self.seed_dir) if self.seed_dir else []


def execute(target: TargetAdapter, payload: bytes, hang_budget: float) -> ExecutionOutcome:
    return target.execute(payload, hang_budget)
