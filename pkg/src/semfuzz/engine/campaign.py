"""The fuzz loop: builtin havoc plus LLM mutants consumed from the broker."""

from __future__ import annotations

import enum
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from semfuzz.broker.base import C2P, LIBRARY_INFO, P2C, Broker, Disconnected
from semfuzz.clock import SimClock, WallClock
from semfuzz.engine.havoc import mutate_builtin
from semfuzz.engine.scheduler import FuzzQueue
from semfuzz.model import (
    PROBE_CLASSES,
    CampaignConfig,
    ConfigError,
    CoverageMap,
    ExecutionOutcome,
    Origin,
    ProbeClass,
    Status,
    TestCase,
)
from semfuzz.targets import TargetAdapter, TargetLoadError, load_target

log = logging.getLogger(__name__)

C2P_BOUND = 1024
RETRY_BASE_NS = 100_000_000
RETRY_CAP_NS = 5_000_000_000


class Verdict(str, enum.Enum):
    CRASH = "Crash"
    HANG = "Hang"
    INTERESTING = "Interesting"
    BORING = "Boring"


def classify_execution(outcome: ExecutionOutcome, cov: CoverageMap) -> tuple[Verdict, CoverageMap]:
    """Crash and Hang win over novelty; the map absorbs the run either way."""
    new = cov.update(outcome.edges, outcome.probes)
    if outcome.status is Status.CRASH:
        return Verdict.CRASH, cov
    if outcome.status is Status.HANG:
        return Verdict.HANG, cov
    return (Verdict.INTERESTING if new else Verdict.BORING), cov


def try_consume_llm(broker: Broker, poll_timeout: float) -> Optional[bytes]:
    return broker.pop(P2C, poll_timeout)


def publish_to_llm(broker: Broker, payload: bytes, bound: int = C2P_BOUND) -> bool:
    """Returns False when the payload was dropped by backpressure or a dead broker."""
    try:
        return broker.push_bounded(C2P, payload, bound)
    except Disconnected:
        return False


@dataclass
class CampaignResult:
    target: str
    coverage_final: dict = field(default_factory=dict)  # class value -> percent
    coverage_timeline: list = field(default_factory=list)  # (t_ns, class value, percent)
    crashes: list = field(default_factory=list)
    hangs: list = field(default_factory=list)
    corpus: list = field(default_factory=list)
    exec_count: int = 0
    llm_derived_execs: int = 0
    probe_totals: dict = field(default_factory=dict)
    covered_counts: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    config: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "coverage_final": dict(self.coverage_final),
            "coverage_timeline": [list(p) for p in self.coverage_timeline],
            "crashes": [c.to_dict() for c in self.crashes],
            "hangs": [c.to_dict() for c in self.hangs],
            "corpus": [c.to_dict() for c in self.corpus],
            "seeds": [c.to_dict() for c in self.seeds],
            "exec_count": self.exec_count,
            "llm_derived_execs": self.llm_derived_execs,
            "probe_totals": dict(self.probe_totals),
            "covered_counts": dict(self.covered_counts),
            "stats": dict(self.stats),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignResult":
        cases = lambda key: [TestCase.from_dict(x) for x in d.get(key, [])]  # noqa: E731
        return cls(
            target=d["target"],
            coverage_final=dict(d.get("coverage_final", {})),
            coverage_timeline=[tuple(p) for p in d.get("coverage_timeline", [])],
            crashes=cases("crashes"),
            hangs=cases("hangs"),
            corpus=cases("corpus"),
            seeds=cases("seeds"),
            exec_count=int(d.get("exec_count", 0)),
            llm_derived_execs=int(d.get("llm_derived_execs", 0)),
            probe_totals=dict(d.get("probe_totals", {})),
            covered_counts=dict(d.get("covered_counts", {})),
            stats=dict(d.get("stats", {})),
            config=d.get("config"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: Path) -> "CampaignResult":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class _BrokerGate:
    """Wraps a broker so outages cost one failed call per backoff window."""

    def __init__(self, broker: Optional[Broker], clock):
        self.broker = broker
        self.clock = clock
        self.retry_at = 0
        self.delay = RETRY_BASE_NS
        self.errors = 0

    def usable(self) -> bool:
        if self.broker is None:
            return False
        if self.retry_at and self.clock.now() < self.retry_at:
            return False
        if self.retry_at:
            self.retry_at = 0
            try:
                self.broker.reconnect()
            except Disconnected:
                self.failed()
                return False
        return True

    def failed(self, exc: Optional[Exception] = None) -> None:
        self.errors += 1
        if exc is not None and self.errors == 1:
            log.warning("broker unavailable (%s); continuing with builtin mutation", exc)
        self.retry_at = self.clock.now() + self.delay
        self.delay = min(self.delay * 2, RETRY_CAP_NS)

    def ok(self) -> None:
        self.delay = RETRY_BASE_NS


class Campaign:
    """One fuzzing campaign; ``run`` drives the loop until the budget is spent."""

    def __init__(
        self,
        config: CampaignConfig,
        target: TargetAdapter,
        broker: Optional[Broker] = None,
        pump: Optional[Callable[[], object]] = None,
        clock=None,
        stop_on_crash: bool = False,
    ):
        self.config = config
        self.stop_on_crash = stop_on_crash
        self.target = target
        self.clock = clock or (SimClock() if config.deterministic_time else WallClock())
        self.gate = _BrokerGate(broker, self.clock)
        self.pump = pump
        self.rng = random.Random(config.rng_seed)
        self.hang_ns = int(config.hang_budget * 1e9)
        self.cov = CoverageMap(target.probe_totals)
        self.crash_map = CoverageMap(target.probe_totals)
        self.hang_map = CoverageMap(target.probe_totals)
        self.queue = FuzzQueue()
        self.next_id = 0
        self.result = CampaignResult(
            target=target.name,
            probe_totals={c.value: n for c, n in target.probe_totals.items()},
            config=config.to_dict(),
        )
        self._last_pct: dict[ProbeClass, float] = {}
        self.stats = {
            "iterations": 0,
            "builtin_execs": 0,
            "c2p_published": 0,
            "c2p_dropped": 0,
            "p2c_consumed": 0,
            "broker_errors": 0,
            "crash_execs": 0,
            "hang_execs": 0,
        }

    def _new_case(self, payload: bytes, origin: Origin, parent: Optional[int]) -> TestCase:
        case = TestCase(self.next_id, payload, origin, parent, self.clock.now())
        self.next_id += 1
        return case

    def _record_coverage(self) -> None:
        t = self.clock.now()
        for cls in PROBE_CLASSES:
            if cls not in self.cov.totals:
                continue
            pct = self.cov.percent(cls)
            if self._last_pct.get(cls) != pct:
                self._last_pct[cls] = pct
                self.result.coverage_timeline.append((t, cls.value, pct))

    def _execute(self, payload: bytes, origin: Origin) -> ExecutionOutcome:
        outcome = self.target.execute(payload, self.config.hang_budget)
        self.result.exec_count += 1
        if origin is Origin.LLM:
            self.result.llm_derived_execs += 1
        # simulated time charges a fixed cost per run, or the budget for a hang
        self.clock.advance(self.hang_ns if outcome.status is Status.HANG else SimClock.EXEC_COST_NS)
        return outcome

    def _handle(self, payload: bytes, origin: Origin, parent: TestCase) -> Verdict:
        outcome = self._execute(payload, origin)
        # crash and hang triage keeps one input per novel path
        if outcome.status is Status.CRASH:
            self.stats["crash_execs"] += 1
            if self.crash_map.update(outcome.edges, outcome.probes):
                self.result.crashes.append(self._new_case(payload, origin, parent.id))
        elif outcome.status is Status.HANG:
            self.stats["hang_execs"] += 1
            if self.hang_map.update(outcome.edges, outcome.probes):
                self.result.hangs.append(self._new_case(payload, origin, parent.id))
        verdict, _ = classify_execution(outcome, self.cov)
        if verdict is Verdict.INTERESTING:
            case = self._new_case(payload, origin, parent.id)
            self.queue.add(case)
            self.queue.reward(parent.id)
            self.result.corpus.append(case)
        if verdict is not Verdict.BORING:
            self._record_coverage()
        return verdict

    def _load_seeds(self) -> None:
        seeds = self.target.seeds()
        if not seeds:
            raise ConfigError("seed-dir", f"no seed files for target {self.target.name}")
        for _, payload in seeds:
            case = self._new_case(payload, Origin.SEED, None)
            outcome = self._execute(payload, Origin.SEED)
            self.cov.update(outcome.edges, outcome.probes)
            self.queue.add(case)
            self.result.seeds.append(case)
        self._record_coverage()

    def _publish_context(self) -> None:
        if not self.gate.usable():
            return
        try:
            self.gate.broker.set(LIBRARY_INFO, self.target.library_info.encode())
        except Disconnected as e:
            self.gate.failed(e)

    def _budget_left(self, deadline: int) -> bool:
        if self.config.max_execs is not None and self.result.exec_count >= self.config.max_execs:
            return False
        return self.clock.now() < deadline

    def iterate(self) -> None:
        cfg = self.config
        parent = self.queue.select_next()
        mutant = mutate_builtin(parent.payload, self.rng, self.target.dictionary)
        gate = self.gate
        if gate.usable():
            try:
                if gate.broker.push_bounded(C2P, mutant, C2P_BOUND):
                    self.stats["c2p_published"] += 1
                else:
                    self.stats["c2p_dropped"] += 1
            except Disconnected as e:
                self.stats["c2p_dropped"] += 1
                gate.failed(e)
        if self.pump is not None:
            self.pump()
        self._handle(mutant, Origin.BUILTIN, parent)
        self.stats["builtin_execs"] += 1
        if gate.usable():
            try:
                llm = try_consume_llm(gate.broker, cfg.poll_timeout)
                gate.ok()
            except Disconnected as e:
                llm = None
                gate.failed(e)
            if llm is not None and self._budget_left(self.deadline):
                self.stats["p2c_consumed"] += 1
                self._handle(llm, Origin.LLM, parent)
        self.stats["iterations"] += 1

    def run(self) -> CampaignResult:
        cfg = self.config
        self.deadline = int(cfg.duration * 1e9)
        if cfg.duration <= 0 or cfg.max_execs == 0:
            return self._finish()
        self._load_seeds()
        self._publish_context()
        while self._budget_left(self.deadline):
            self.iterate()
            if self.stop_on_crash and self.result.crashes:
                break
        return self._finish()

    def _finish(self) -> CampaignResult:
        r = self.result
        r.coverage_final = {c.value: self.cov.percent(c) for c in PROBE_CLASSES if c in self.cov.totals}
        r.covered_counts = {c.value: len(s) for c, s in self.cov.covered.items()}
        self.stats["broker_errors"] = self.gate.errors
        self.stats["elapsed_ns"] = self.clock.now()
        r.stats = dict(self.stats)
        return r


def write_outputs(result: CampaignResult, out_dir: Path) -> None:
    out = Path(out_dir)
    for sub, cases in (("queue", result.seeds + result.corpus), ("crashes", result.crashes), ("hangs", result.hangs)):
        d = out / sub
        d.mkdir(parents=True, exist_ok=True)
        for case in cases:
            (d / case.filename).write_bytes(case.payload)
    (out / "campaign.json").write_text(result.dumps(), encoding="utf-8")


def run_campaign(
    config: CampaignConfig,
    broker: Optional[Broker] = None,
    pump: Optional[Callable[[], object]] = None,
    out_dir: Optional[Path] = None,
    clock=None,
    target: Optional[TargetAdapter] = None,
    stop_on_crash: bool = False,
) -> CampaignResult:
    """Run one campaign.

    ``broker`` overrides ``config.broker``; with ``broker="none"`` in the
    config and no handle passed, the loop is builtin-only. ``pump`` runs after
    every publish, which lets a deterministic run drive the mutation service
    in lockstep.
    """
    config.validate()
    if target is None:
        try:
            target = load_target(
                config.target,
                seed_dir=config.seed_dir,
                command=config.target_command,
                wall_clock_hangs=not config.deterministic_time,
            )
        except TargetLoadError as e:
            raise ConfigError("target", str(e)) from e
    if config.broker == "none":
        broker = None
    campaign = Campaign(config, target, broker, pump, clock, stop_on_crash)
    result = campaign.run()
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def replay_corpus(result: CampaignResult, target: TargetAdapter, hang_budget: float = 0.1) -> list[int]:
    """Re-run seeds then corpus entries in id order.

    Returns ids of corpus entries that were not novel against the map rebuilt
    from everything before them. The rebuilt map is a subset of the live one,
    so a sound corpus yields an empty list.
    """
    cov = CoverageMap(target.probe_totals)
    stale = []
    corpus_ids = {c.id for c in result.corpus}
    for case in sorted(result.seeds + result.corpus, key=lambda c: c.id):
        out = target.execute(case.payload, hang_budget)
        new = cov.update(out.edges, out.probes)
        if case.id in corpus_ids and not new:
            stale.append(case.id)
    return stale


def timeline_monotone(result: CampaignResult) -> bool:
    last: dict[str, float] = {}
    prev_t = -1
    for t, cls, pct in result.coverage_timeline:
        if t < prev_t or pct < last.get(cls, 0.0):
            return False
        prev_t = t
        last[cls] = pct
    return True
