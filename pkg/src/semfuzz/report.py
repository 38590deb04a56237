"""report.json / report.md / timeline.csv rendering."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Optional, Sequence

from semfuzz.engine.campaign import CampaignResult
from semfuzz.metrics import MetricsSummary, cip, display
from semfuzz.model import PROBE_CLASSES


class TargetMismatch(ValueError):
    pass


def cip_table(result: CampaignResult, baseline: CampaignResult) -> dict:
    if result.target != baseline.target:
        raise TargetMismatch(f"cannot compare {result.target!r} against {baseline.target!r}")
    return {
        c: cip(result.coverage_final[c], baseline.coverage_final[c])
        for c in result.coverage_final
        if c in baseline.coverage_final
    }


def report_dict(
    result: CampaignResult,
    summaries: Sequence[MetricsSummary],
    baseline: Optional[CampaignResult] = None,
    baseline_name: Optional[str] = None,
) -> dict:
    return {
        "target": result.target,
        "exec_count": result.exec_count,
        "llm_derived_execs": result.llm_derived_execs,
        "crashes": len(result.crashes),
        "hangs": len(result.hangs),
        "corpus": len(result.corpus),
        "probe_totals": dict(result.probe_totals),
        "covered_counts": dict(result.covered_counts),
        "coverage_final": dict(result.coverage_final),
        "coverage_timeline": [{"t_ns": t, "class": c, "percent": p} for t, c, p in result.coverage_timeline],
        "summaries": [s.to_dict() for s in summaries],
        "baseline": baseline_name if baseline is not None else None,
        "cip": cip_table(result, baseline) if baseline is not None else None,
    }


def timeline_csv(result: CampaignResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_ms", "class", "percent"])
    for t, cls, pct in result.coverage_timeline:
        w.writerow([f"{t / 1e6:.3f}", cls, repr(pct)])
    return buf.getvalue()


def _md_table(header: Sequence[str], rows: Sequence[Sequence]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return lines


def _coverage_over_time(result: CampaignResult) -> list[list]:
    # one row per timestamp, carrying forward the last value of each class
    classes = [c.value for c in PROBE_CLASSES if c.value in result.probe_totals]
    current = {c: 0.0 for c in classes}
    rows: list[list] = []
    for t, cls, pct in result.coverage_timeline:
        current[cls] = pct
        row = [f"{t / 1e6:.3f}"] + [display(current[c]) for c in classes]
        if rows and rows[-1][0] == row[0]:
            rows[-1] = row
        else:
            rows.append(row)
    return rows


def report_markdown(data: dict) -> str:
    classes = [c.value for c in PROBE_CLASSES if c.value in data["probe_totals"]]
    out = [f"# Campaign report: {data['target']}", ""]
    out.append(
        f"Executions: {data['exec_count']} ({data['llm_derived_execs']} LLM-derived). "
        f"Corpus: {data['corpus']}. Crashes: {data['crashes']}. Hangs: {data['hangs']}."
    )
    out += ["", "## Final coverage", ""]
    out += _md_table(
        ["class", "covered", "total", "percent"],
        [
            [c, data["covered_counts"].get(c, 0), data["probe_totals"][c], display(data["coverage_final"].get(c, 0.0))]
            for c in classes
        ]
        or [["-", 0, 0, display(0.0)]],
    )
    out += ["", "## Coverage over time", ""]
    result_rows = _coverage_over_time(CampaignResult.from_dict({
        "target": data["target"],
        "probe_totals": data["probe_totals"],
        "coverage_timeline": [(p["t_ns"], p["class"], p["percent"]) for p in data["coverage_timeline"]],
    }))
    out += _md_table(["t_ms"] + classes, result_rows or [["0.000"] + [display(0.0)] * len(classes)])
    out += ["", "## Query metrics", ""]
    rows = [
        [
            s["benchmark"], s["shot"], s["n_total"], display(s["scr"]), display(s["rdr"]), display(s["fmr"]),
            display(s["hcer"]), display(s["timeout_rate"]), display(s["empty_rate"]),
        ]
        for s in data["summaries"]
    ]
    out += _md_table(
        ["benchmark", "shot", "n", "SCR %", "RDR %", "FMR %", "HCER %", "timeout %", "empty %"],
        rows or [["-", "-", 0] + [display(0.0)] * 6],
    )
    if data["cip"] is not None:
        out += ["", f"## CIP against baseline `{data['baseline']}`", ""]
        out += _md_table(["class", "CIP (pp)"], [[c, display(v)] for c, v in data["cip"].items()])
    return "\n".join(out) + "\n"


def render_report(
    result: CampaignResult,
    summaries: Sequence[MetricsSummary],
    out_dir: Path,
    baseline: Optional[CampaignResult] = None,
    baseline_name: str = "baseline",
) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = report_dict(result, summaries, baseline, baseline_name)
    (out / "report.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "report.md").write_text(report_markdown(data), encoding="utf-8")
    (out / "timeline.csv").write_text(timeline_csv(result), encoding="utf-8")
    return data
