"""Mutation-quality metrics over query logs, plus coverage deltas.

Rates are kept as exact fractions of record counts and converted to float once,
so the status partition sums to 100 up to a single rounding per term.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from semfuzz.model import CoverageMap, ProbeClass, QueryLogRecord, QueryStatus

log = logging.getLogger(__name__)

Scope = tuple  # (benchmark, shot)


class EmptyTable(ValueError):
    pass


class RangeError(ValueError):
    pass


class UnknownClass(KeyError):
    pass


@dataclass(frozen=True)
class LogTable:
    scope: Scope
    records: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        prev = None
        for r in self.records:
            if (r.benchmark, r.shot) != tuple(self.scope):
                raise ValueError(f"record {r.seq} is outside scope {self.scope}")
            if prev is not None and r.seq <= prev:
                raise ValueError(f"seq not strictly increasing at {r.seq}")
            prev = r.seq

    def __len__(self) -> int:
        return len(self.records)

    def counts(self) -> Counter:
        return Counter(r.status for r in self.records)


def _require(table: LogTable) -> int:
    n = len(table.records)
    if n == 0:
        raise EmptyTable(f"no records in scope {table.scope}")
    return n


def _rate(count: int, n: int) -> float:
    return float(Fraction(100 * count, n))


def status_rate(table: LogTable, status: QueryStatus) -> float:
    n = _require(table)
    return _rate(sum(1 for r in table.records if r.status is status), n)


def scr(table: LogTable) -> float:
    return status_rate(table, QueryStatus.OK)


def fmr(table: LogTable) -> float:
    return status_rate(table, QueryStatus.FORMAT_MISMATCH)


def hcer(table: LogTable) -> float:
    return status_rate(table, QueryStatus.HEX_ERROR)


def timeout_rate(table: LogTable) -> float:
    return status_rate(table, QueryStatus.TIMEOUT)


def empty_rate(table: LogTable) -> float:
    return status_rate(table, QueryStatus.EMPTY)


def mark_duplicates(table: LogTable) -> LogTable:
    """Flag each Ok record whose output digest already appeared in this table."""
    seen: set = set()
    out = []
    for r in table.records:
        dup = False
        if r.status is QueryStatus.OK:
            dup = r.final_output_digest in seen
            seen.add(r.final_output_digest)
        out.append(r if r.duplicate == dup else replace(r, duplicate=dup))
    return LogTable(table.scope, out)


def rdr(table: LogTable) -> float:
    n = _require(table)
    marked = mark_duplicates(table)
    return _rate(sum(r.duplicate for r in marked.records), n)


def cip(coverage_llm: float, coverage_baseline: float) -> float:
    """Percentage-point difference, exact for decimal inputs like 37.66."""
    for v in (coverage_llm, coverage_baseline):
        if not 0.0 <= v <= 100.0:
            raise RangeError(f"coverage {v} outside [0, 100]")
    return float(Decimal(repr(float(coverage_llm))) - Decimal(repr(float(coverage_baseline))))


def coverage_percent(cov: CoverageMap, cls) -> float:
    try:
        cls = ProbeClass(cls)
    except ValueError:
        raise UnknownClass(cls) from None
    if cls not in cov.totals:
        raise UnknownClass(cls)
    return _rate(len(cov.covered[cls]), cov.totals[cls])


def display(value: float, places: int = 4) -> str:
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_EVEN))


@dataclass(frozen=True)
class MetricsSummary:
    benchmark: str
    shot: int
    n_total: int
    counts: Mapping[str, int]
    duplicates: int
    scr: float
    rdr: float
    fmr: float
    hcer: float
    timeout_rate: float
    empty_rate: float
    mean_latency_ms: float = 0.0
    coverage: Mapping[str, float] = field(default_factory=dict)
    cip: Optional[Mapping[str, float]] = None

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "shot": self.shot,
            "n_total": self.n_total,
            "counts": dict(self.counts),
            "duplicates": self.duplicates,
            "scr": self.scr,
            "rdr": self.rdr,
            "fmr": self.fmr,
            "hcer": self.hcer,
            "timeout_rate": self.timeout_rate,
            "empty_rate": self.empty_rate,
            "mean_latency_ms": self.mean_latency_ms,
            "coverage": dict(self.coverage),
            "cip": dict(self.cip) if self.cip is not None else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsSummary":
        d = dict(d)
        d["counts"] = dict(d["counts"])
        return cls(**d)


def summarize(
    table: LogTable,
    coverage: Optional[Mapping[str, float]] = None,
    baseline: Optional[Mapping[str, float]] = None,
) -> MetricsSummary:
    n = _require(table)
    marked = mark_duplicates(table)
    counts = marked.counts()
    dups = sum(r.duplicate for r in marked.records)
    assert sum(counts.values()) == n
    coverage = dict(coverage or {})
    deltas = None
    if baseline is not None:
        deltas = {c: cip(coverage[c], baseline[c]) for c in coverage if c in baseline}
    benchmark, shot = table.scope
    return MetricsSummary(
        benchmark=benchmark,
        shot=shot,
        n_total=n,
        counts={s.value: counts.get(s, 0) for s in QueryStatus},
        duplicates=dups,
        scr=_rate(counts[QueryStatus.OK], n),
        rdr=_rate(dups, n),
        fmr=_rate(counts[QueryStatus.FORMAT_MISMATCH], n),
        hcer=_rate(counts[QueryStatus.HEX_ERROR], n),
        timeout_rate=_rate(counts[QueryStatus.TIMEOUT], n),
        empty_rate=_rate(counts[QueryStatus.EMPTY], n),
        mean_latency_ms=float(sum(Fraction(r.latency_ms) for r in table.records) / n),
        coverage=coverage,
        cip=deltas,
    )


def group_records(records: Iterable[QueryLogRecord]) -> tuple[list[LogTable], int]:
    """Group by (benchmark, shot) in first-seen order; out-of-order seqs are skipped."""
    groups: dict[Scope, list] = {}
    skipped = 0
    for r in records:
        bucket = groups.setdefault((r.benchmark, r.shot), [])
        if bucket and r.seq <= bucket[-1].seq:
            skipped += 1
            continue
        bucket.append(r)
    return [LogTable(scope, recs) for scope, recs in groups.items()], skipped


def build_log_table(path: Path) -> tuple[list[LogTable], int]:
    """Parse a JSONL query log. Returns (tables, skipped line count)."""
    records = []
    skipped = 0
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(QueryLogRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                skipped += 1
                log.debug("skipping line %d: %s", lineno, e)
    tables, out_of_order = group_records(records)
    return tables, skipped + out_of_order


def write_log_table(tables: Sequence[LogTable], path: Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in tables:
            for r in t.records:
                fh.write(json.dumps(r.to_dict()) + "\n")
