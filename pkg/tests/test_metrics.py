import json
import random
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from semfuzz.engine import CampaignResult
from semfuzz.metrics import (
    EmptyTable,
    LogTable,
    MetricsSummary,
    RangeError,
    UnknownClass,
    build_log_table,
    cip,
    coverage_percent,
    display,
    fmr,
    group_records,
    hcer,
    mark_duplicates,
    rdr,
    scr,
    summarize,
    timeout_rate,
    empty_rate,
    write_log_table,
)
from semfuzz.model import CoverageMap, ProbeClass, QueryLogRecord, QueryStatus, digest
from semfuzz.report import TargetMismatch, cip_table, render_report, timeline_csv


def rec(seq, status, out=None, benchmark="b", shot=0, latency=0.0):
    fod = digest(out) if status is QueryStatus.OK else None
    return QueryLogRecord(seq, benchmark, shot, digest(b"in%d" % seq), status, fod, latency)


OK = QueryStatus.OK


def test_scr_example():
    t = LogTable(("b", 0), [rec(i, OK if i < 3 else QueryStatus.TIMEOUT, b"%d" % i) for i in range(4)])
    assert scr(t) == 75.0
    assert timeout_rate(t) == 25.0


def test_rdr_aab():
    t = LogTable(("b", 0), [rec(0, OK, b"a"), rec(1, OK, b"a"), rec(2, OK, b"b")])
    assert rdr(t) == pytest.approx(100 / 3, abs=1e-12)
    assert display(rdr(t)) == "33.3333"
    assert [r.duplicate for r in mark_duplicates(t).records] == [False, True, False]


def test_rdr_ignores_non_ok_records():
    t = LogTable(("b", 0), [rec(0, OK, b"a"), rec(1, QueryStatus.EMPTY), rec(2, QueryStatus.EMPTY)])
    assert rdr(t) == 0.0


def test_empty_table_errors():
    t = LogTable(("b", 0), [])
    for f in (scr, rdr, fmr, hcer, summarize):
        with pytest.raises(EmptyTable):
            f(t)


def test_table_rejects_bad_scope_and_order():
    with pytest.raises(ValueError):
        LogTable(("b", 1), [rec(0, OK, b"a")])
    with pytest.raises(ValueError):
        LogTable(("b", 0), [rec(1, OK, b"a"), rec(1, OK, b"b")])


def test_scope_isolation():
    recs = [rec(0, OK, b"x", "p", 0), rec(1, OK, b"x", "q", 0), rec(2, OK, b"x", "p", 1), rec(3, OK, b"x", "p", 0)]
    tables, skipped = group_records(recs)
    assert skipped == 0
    by = {t.scope: t for t in tables}
    assert set(by) == {("p", 0), ("q", 0), ("p", 1)}
    assert rdr(by[("p", 0)]) == 50.0
    assert rdr(by[("q", 0)]) == 0.0
    assert rdr(by[("p", 1)]) == 0.0


def test_group_skips_out_of_order():
    tables, skipped = group_records([rec(5, OK, b"a"), rec(3, OK, b"b"), rec(6, OK, b"c")])
    assert skipped == 1
    assert [r.seq for r in tables[0].records] == [5, 6]


statuses = st.sampled_from(list(QueryStatus))


@given(st.lists(st.tuples(statuses, st.integers(0, 5)), min_size=1, max_size=200))
def test_partition_and_brute_force(items):
    recs = [rec(i, s, b"%d" % v) for i, (s, v) in enumerate(items)]
    t = LogTable(("b", 0), recs)
    s = summarize(t)
    n = len(recs)
    assert sum(s.counts.values()) == n
    total = s.scr + s.fmr + s.hcer + s.timeout_rate + s.empty_rate
    assert total == pytest.approx(100.0, abs=1e-9)
    ok_outs = [v for st_, v in items if st_ is OK]
    dups = len(ok_outs) - len(set(ok_outs))
    assert s.duplicates == dups
    assert s.rdr == 100 * dups / n or s.rdr == pytest.approx(100 * dups / n, rel=1e-15)
    assert 0 <= s.rdr <= s.scr


def test_summary_latency_and_dict_roundtrip():
    t = LogTable(("b", 3), [rec(0, OK, b"a", shot=3, latency=10.0), rec(1, QueryStatus.TIMEOUT, shot=3, latency=50.0)])
    s = summarize(t, {"branch": 40.0}, {"branch": 30.5})
    assert s.mean_latency_ms == 30.0
    assert s.cip == {"branch": 9.5}
    assert MetricsSummary.from_dict(json.loads(json.dumps(s.to_dict()))) == s


@pytest.mark.parametrize("a,b,expected", [(37.66, 36.94, 0.72), (39.08, 37.83, 1.25), (34.99, 40.24, -5.25)])
def test_cip_examples(a, b, expected):
    assert abs(cip(a, b) - expected) < 1e-9
    assert cip(a, b) == expected


pct = st.floats(0, 100, allow_nan=False)


@given(pct, pct)
def test_cip_antisymmetric(a, b):
    assert cip(a, b) == -cip(b, a)
    assert cip(a, a) == 0.0


@pytest.mark.parametrize("a,b", [(-0.1, 3), (3, 100.01), (float("nan"), 1)])
def test_cip_range(a, b):
    with pytest.raises(RangeError):
        cip(a, b)


def test_coverage_percent():
    cov = CoverageMap({ProbeClass.BRANCH: 4, ProbeClass.LINE: 3})
    cov.update({}, [(ProbeClass.BRANCH, 1), (ProbeClass.LINE, 0)])
    assert coverage_percent(cov, "branch") == 25.0
    assert coverage_percent(cov, ProbeClass.LINE) == pytest.approx(100 / 3)
    with pytest.raises(UnknownClass):
        coverage_percent(cov, "region")
    with pytest.raises(UnknownClass):
        coverage_percent(cov, "bogus")


def test_display_half_even():
    assert display(0.00005) == "0.0000"
    assert display(0.00015) == "0.0002"
    assert display(-5.25) == "-5.2500"


def test_log_file_grouping_and_skips(tmp_path):
    path = tmp_path / "log.jsonl"
    lines = []
    seq = 0
    for bench in ("a", "b"):
        for shot in (0, 3):
            for j in range(5):
                lines.append(json.dumps(rec(seq, OK, b"%d" % j, bench, shot).to_dict()))
                seq += 1
    lines.insert(3, "{not json")
    lines.insert(7, json.dumps({"seq": 99}))
    lines.append("")
    path.write_text("\n".join(lines) + "\n")
    tables, skipped = build_log_table(path)
    assert skipped == 2
    assert [t.scope for t in tables] == [("a", 0), ("a", 3), ("b", 0), ("b", 3)]
    assert all(len(t) == 5 for t in tables)

    out = tmp_path / "copy.jsonl"
    write_log_table(tables, out)
    again, skipped2 = build_log_table(out)
    assert skipped2 == 0
    assert again == tables


def test_oracle_10k_records():
    rng = random.Random(11)
    recs = []
    outputs = []
    for i in range(10_000):
        s = rng.choice(list(QueryStatus))
        if s is OK:
            v = rng.randrange(50) if rng.random() < 0.3 else 1000 + i
            outputs.append(v)
            recs.append(rec(i, s, b"%d" % v))
        else:
            recs.append(rec(i, s))
    t = LogTable(("b", 0), recs)
    c = Counter(r.status for r in recs)
    assert scr(t) * 10_000 == pytest.approx(100 * c[OK])
    seen, dups = set(), 0
    for v in outputs:
        dups += v in seen
        seen.add(v)
    s = summarize(t)
    assert s.duplicates == dups
    assert s.counts == {q.value: c[q] for q in QueryStatus}
    assert empty_rate(t) == 100 * c[QueryStatus.EMPTY] / 10_000


def _result(target="toy", cov=None):
    return CampaignResult.from_dict({
        "target": target,
        "probe_totals": {"branch": 4},
        "coverage_final": cov or {"branch": 50.0},
        "covered_counts": {"branch": 2},
        "coverage_timeline": [(0, "branch", 25.0), (1_500_000, "branch", 50.0)],
    })


def test_report_roundtrip(tmp_path):
    t = LogTable(("toy", 0), [rec(0, OK, b"a", "toy"), rec(1, QueryStatus.EMPTY, benchmark="toy")])
    s = summarize(t)
    data = render_report(_result(), [s], tmp_path, _result(cov={"branch": 25.0}), "base")
    loaded = json.loads((tmp_path / "report.json").read_text())
    assert [MetricsSummary.from_dict(d) for d in loaded["summaries"]] == [s]
    assert loaded["cip"] == {"branch": 25.0} == data["cip"]
    md = (tmp_path / "report.md").read_text()
    assert "## Coverage over time" in md and "| branch | 25.0000 |" in md
    assert (tmp_path / "timeline.csv").read_text() == timeline_csv(_result())
    assert timeline_csv(_result()).splitlines() == ["t_ms,class,percent", "0.000,branch,25.0", "1.500,branch,50.0"]


def test_report_empty_campaign(tmp_path):
    empty = CampaignResult.from_dict({"target": "toy", "probe_totals": {"branch": 4}})
    data = render_report(empty, [], tmp_path)
    assert data["exec_count"] == 0 and data["cip"] is None
    assert (tmp_path / "report.md").read_text().startswith("# Campaign report: toy")


def test_cip_table_mismatch():
    with pytest.raises(TargetMismatch):
        cip_table(_result("a"), _result("b"))
