"""Command-line entry point: ``semfuzz <verb> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import shlex
import shutil
import signal
import sys
import threading
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

if sys.version_info >= (3, 11):
    import tomllib as tomli
else:
    import tomli

from semfuzz import __version__
from semfuzz.broker import BROKER_ENV, Broker, BrokerServer, InProcessBroker, RespBroker
from semfuzz.broker.base import Disconnected
from semfuzz.clock import SimClock, WallClock
from semfuzz.engine.campaign import CampaignResult, run_campaign
from semfuzz.metrics import build_log_table, display, group_records, summarize
from semfuzz.model import (
    BackendDescriptor,
    BackendKind,
    CampaignConfig,
    ConfigError,
    ProbeClass,
    parse_hostport,
)
from semfuzz.mutator.backends import BACKEND_URL_ENV, MODEL_ENV, make_backend
from semfuzz.mutator.prompts import PromptTemplates, TemplateError
from semfuzz.mutator.service import JsonlLogSink, MutationService
from semfuzz.report import TargetMismatch, cip_table, render_report
from semfuzz.targets import available_targets, load_target

log = logging.getLogger("semfuzz")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
MODES = ("all-in-one", "fuzzer-only")
SERVICE_JOIN_TIMEOUT = 10.0

_DURATION = re.compile(r"^\s*(\d+(?:\.\d*)?|\.\d+)\s*(ms|s|m|h)?\s*$")
_UNITS = {None: 1.0, "ms": 1e-3, "s": 1.0, "m": 60.0, "h": 3600.0}


def parse_duration(text, key: str = "duration") -> float:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    m = _DURATION.match(str(text))
    if not m:
        raise ConfigError(key, f"cannot parse duration {text!r} (use e.g. 10s, 500ms, 2m, 1h)")
    return float(m.group(1)) * _UNITS[m.group(2)]


# Config-file keys (kebab-case) and how to coerce them.
_CAMPAIGN_KEYS = {
    "target": str,
    "target-command": None,
    "duration": parse_duration,
    "shots": int,
    "seed-dir": Path,
    "rng-seed": int,
    "broker": str,
    "poll-timeout": parse_duration,
    "hang-budget": parse_duration,
    "split-threshold": int,
    "temperature": float,
    "max-execs": int,
    "deterministic-time": bool,
}
_BACKEND_KEYS = {
    "backend": str,
    "endpoint": str,
    "model": str,
    "request-timeout": parse_duration,
    "timeout-rate": float,
    "mismatch-rate": float,
    "oddhex-rate": float,
    "dup-rate": float,
}
_RUN_KEYS = {"mode": str, "trials": int, "out": Path, "prompts-dir": Path, "harvest-examples": Path, "benchmark": str}
CONFIG_KEYS = {**_CAMPAIGN_KEYS, **_BACKEND_KEYS, **_RUN_KEYS}


def load_config_file(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e}") from e
    except tomli.TOMLDecodeError as e:
        raise ConfigError("config", f"{path}: {e}") from e
    return normalize_settings(raw)


def normalize_settings(raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        key = key.replace("_", "-")
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown configuration key")
        conv = CONFIG_KEYS[key]
        try:
            if key == "target-command":
                value = tuple(shlex.split(value)) if isinstance(value, str) else tuple(value)
            elif conv is bool and not isinstance(value, bool):
                raise ValueError(f"expected true or false, got {value!r}")
            elif conv is parse_duration:
                value = parse_duration(value, key)
            elif conv is not None:
                value = conv(value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(key, str(e)) from e
        out[key] = value
    return out


def env_settings(environ=os.environ) -> dict:
    out = {}
    if environ.get(BROKER_ENV):
        out["broker"] = environ[BROKER_ENV]
    if environ.get(BACKEND_URL_ENV):
        out["endpoint"] = environ[BACKEND_URL_ENV]
    if environ.get(MODEL_ENV):
        out["model"] = environ[MODEL_ENV]
    return out


def build_config(settings: dict) -> CampaignConfig:
    try:
        kind = BackendKind(settings.get("backend", BackendKind.MOCK_IDENTITY.value))
    except ValueError:
        allowed = ", ".join(k.value for k in BackendKind)
        raise ConfigError("backend", f"unknown backend {settings['backend']!r}; allowed: {allowed}") from None
    temperature = settings.get("temperature", 0.0)
    rng_seed = settings.get("rng-seed", 0)
    bkw = {k.replace("-", "_"): v for k, v in settings.items() if k in _BACKEND_KEYS and k != "backend"}
    backend = BackendDescriptor(kind=kind, temperature=temperature, rng_seed=rng_seed, **bkw)
    ckw = {k.replace("-", "_"): v for k, v in settings.items() if k in _CAMPAIGN_KEYS}
    config = CampaignConfig(backend=backend, **ckw)
    config.validate()
    return config


def _flags_to_settings(args: argparse.Namespace) -> dict:
    out = {}
    for key in CONFIG_KEYS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is None or value is False:
            continue
        out[key] = value
    return normalize_settings(out)


def resolve_settings(args: argparse.Namespace) -> dict:
    settings: dict = {}
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    settings.update(env_settings())
    settings.update(_flags_to_settings(args))
    return settings


def _load_templates(prompts_dir: Optional[Path]) -> Optional[PromptTemplates]:
    if prompts_dir is None:
        return None
    try:
        return PromptTemplates.load(prompts_dir)
    except TemplateError as e:
        raise ConfigError("prompts-dir", str(e)) from e


def _open_broker(address: str) -> Broker:
    if address == "inprocess":
        return InProcessBroker()
    host, port = parse_hostport(address)
    try:
        return RespBroker(host, port)
    except Disconnected as e:
        raise RuntimeError(str(e)) from e


def _clear_run_outputs(out: Path) -> None:
    for sub in ("queue", "crashes", "hangs"):
        shutil.rmtree(out / sub, ignore_errors=True)
    for name in ("log.jsonl", "campaign.json", "report.json", "report.md", "timeline.csv"):
        (out / name).unlink(missing_ok=True)


def run_trial(config: CampaignConfig, settings: dict, out: Path, baseline: Optional[CampaignResult] = None):
    mode = settings.get("mode", "all-in-one")
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {', '.join(MODES)}, got {mode!r}")
    templates = _load_templates(settings.get("prompts-dir"))
    benchmark = settings.get("benchmark", config.target)
    out.mkdir(parents=True, exist_ok=True)
    _clear_run_outputs(out)

    broker = None
    sink = JsonlLogSink(out / "log.jsonl")
    service = None
    thread = None
    stop = threading.Event()
    pump = None
    try:
        if config.broker != "none":
            broker = _open_broker(config.broker)
        if broker is not None and mode == "all-in-one":
            # the service keeps its own clock so LLM latency never eats the fuzz budget
            svc_clock = SimClock() if config.deterministic_time else WallClock()
            service = MutationService(
                broker,
                make_backend(config.backend, svc_clock),
                config.shots,
                benchmark,
                sink,
                split_threshold=config.split_threshold,
                templates=templates,
                clock=svc_clock,
                harvest_dir=settings.get("harvest-examples"),
            )
            if config.deterministic_time:
                pump = lambda: service.step(0)  # noqa: E731
            else:
                thread = threading.Thread(target=service.run, args=(stop,), name="mutation-service", daemon=True)
                thread.start()
        result = run_campaign(config, broker=broker, pump=pump, out_dir=out)
    finally:
        stop.set()
        if thread is not None:
            thread.join(SERVICE_JOIN_TIMEOUT)
        if service is not None:
            service.backend.close()
        sink.close()
        if broker is not None:
            broker.close()
    tables, _ = group_records(sink.records)
    base_cov = baseline.coverage_final if baseline is not None else None
    summaries = [summarize(t, result.coverage_final, base_cov) for t in tables]
    render_report(result, summaries, out, baseline)
    return result, summaries


def cmd_run(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    if args.mode is None and "mode" not in settings and settings.get("broker", "inprocess") == "none":
        settings["mode"] = "fuzzer-only"
    config = build_config(settings)
    trials = settings.get("trials", 1)
    if trials < 1:
        raise ConfigError("trials", "must be >= 1")
    out = Path(settings.get("out", "out"))
    baseline = CampaignResult.load(Path(args.baseline) / "campaign.json") if args.baseline else None
    if baseline is not None and baseline.target != config.target:
        raise TargetMismatch(f"baseline target {baseline.target!r} differs from {config.target!r}")
    if trials == 1:
        result, _ = run_trial(config, settings, out, baseline)
        _print_run(result, out)
        return EXIT_OK
    per_trial = []
    for i in range(trials):
        cfg = replace(config, rng_seed=config.rng_seed + i, backend=replace(config.backend, rng_seed=config.rng_seed + i))
        tdir = out / f"trial-{i}"
        result, summaries = run_trial(cfg, settings, tdir, baseline)
        _print_run(result, tdir)
        per_trial.append({"dir": tdir.name, "rng_seed": cfg.rng_seed, "result": result, "summaries": summaries})
    write_aggregate(per_trial, out)
    return EXIT_OK


def write_aggregate(per_trial: list, out: Path) -> dict:
    classes = list(per_trial[0]["result"].coverage_final)
    n = len(per_trial)
    agg = {
        "trials": [
            {
                "dir": t["dir"],
                "rng_seed": t["rng_seed"],
                "exec_count": t["result"].exec_count,
                "llm_derived_execs": t["result"].llm_derived_execs,
                "crashes": len(t["result"].crashes),
                "coverage_final": t["result"].coverage_final,
                "summaries": [s.to_dict() for s in t["summaries"]],
            }
            for t in per_trial
        ],
        "mean_coverage": {c: sum(t["result"].coverage_final[c] for t in per_trial) / n for c in classes},
        "mean_exec_count": sum(t["result"].exec_count for t in per_trial) / n,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "aggregate.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return agg


def _print_run(result: CampaignResult, out: Path) -> None:
    cov = ", ".join(f"{c} {display(p)}%" for c, p in result.coverage_final.items())
    print(
        f"{out}: {result.exec_count} execs ({result.llm_derived_execs} from LLM), "
        f"{len(result.corpus)} corpus, {len(result.crashes)} crashes, {len(result.hangs)} hangs; {cov}"
    )


def cmd_serve_mutator(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    address = settings.get("broker")
    if not address or address in ("none", "inprocess"):
        raise ConfigError("broker", f"serve-mutator needs --broker host:port or {BROKER_ENV}")
    config = build_config(settings)
    templates = _load_templates(settings.get("prompts-dir"))
    broker = _open_broker(address)
    sink = JsonlLogSink(Path(args.log))
    service = MutationService(
        broker,
        make_backend(config.backend),
        config.shots,
        settings.get("benchmark", config.target),
        sink,
        split_threshold=config.split_threshold,
        templates=templates,
        harvest_dir=settings.get("harvest-examples"),
    )
    stop = threading.Event()
    _stop_on_signals(stop)
    print(f"mutation service on {address} (backend {config.backend.kind.value}, {config.shots}-shot)", flush=True)
    try:
        if args.max_messages is not None:
            handled = 0
            while handled < args.max_messages and not stop.is_set():
                if service.step(0.1) is not None:
                    handled += 1
        else:
            service.run(stop)
    finally:
        service.backend.close()
        sink.close()
        broker.close()
    return EXIT_OK


def _stop_on_signals(stop: threading.Event) -> None:
    if threading.current_thread() is not threading.main_thread():
        return
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())


def cmd_broker(args: argparse.Namespace) -> int:
    host, port = args.host, args.port
    if port is None:
        env = os.environ.get(BROKER_ENV)
        port = parse_hostport(env)[1] if env else 6379
    server = BrokerServer(host, port)
    print(f"broker listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        tables, skipped = build_log_table(Path(args.log))
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    summaries = [summarize(t) for t in tables if len(t)]
    if args.json:
        print(json.dumps({"skipped": skipped, "summaries": [s.to_dict() for s in summaries]}, indent=2))
        return EXIT_OK
    print("benchmark\tshot\tn\tSCR%\tRDR%\tFMR%\tHCER%\ttimeout%\tempty%")
    for s in summaries:
        vals = [s.scr, s.rdr, s.fmr, s.hcer, s.timeout_rate, s.empty_rate]
        print("\t".join([s.benchmark, str(s.shot), str(s.n_total)] + [display(v) for v in vals]))
    print(f"skipped lines: {skipped}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    result = CampaignResult.load(run_dir / "campaign.json")
    baseline = CampaignResult.load(Path(args.baseline) / "campaign.json") if args.baseline else None
    summaries = []
    log_path = run_dir / "log.jsonl"
    if log_path.exists():
        tables, _ = build_log_table(log_path)
        base_cov = baseline.coverage_final if baseline is not None else None
        summaries = [summarize(t, result.coverage_final, base_cov) for t in tables if len(t)]
    out = Path(args.out) if args.out else run_dir
    name = Path(args.baseline).name if args.baseline else "baseline"
    render_report(result, summaries, out, baseline, name)
    print(f"wrote {out / 'report.json'}, {out / 'report.md'}, {out / 'timeline.csv'}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    a = CampaignResult.load(Path(args.run_a) / "campaign.json")
    b = CampaignResult.load(Path(args.run_b) / "campaign.json")
    table = cip_table(a, b)
    print("class\tllm%\tbaseline%\tCIP")
    for c, v in table.items():
        print(f"{c}\t{display(a.coverage_final[c])}\t{display(b.coverage_final[c])}\t{display(v)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        data = {"target": a.target, "run": str(args.run_a), "baseline": str(args.run_b), "cip": table}
        (out / "compare.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_targets(args: argparse.Namespace) -> int:
    for name in available_targets():
        t = load_target(name)
        totals = ", ".join(f"{c.value} {t.probe_totals[c]}" for c in ProbeClass)
        print(f"{name}\t{totals}")
    return EXIT_OK


def _add_campaign_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML file with kebab-case keys; flags win")
    p.add_argument("--target")
    p.add_argument("--target-command", help="external command; @@ is replaced by the input file")
    p.add_argument("--duration", help="e.g. 10s, 2m, 1h")
    p.add_argument("--shots", type=int)
    p.add_argument("--seed-dir")
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--broker", help="none, inprocess or host:port")
    p.add_argument("--backend", help="mock-identity, mock-mutator, mock-chaos or http")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--request-timeout")
    p.add_argument("--timeout-rate", type=float)
    p.add_argument("--mismatch-rate", type=float)
    p.add_argument("--oddhex-rate", type=float)
    p.add_argument("--dup-rate", type=float)
    p.add_argument("--poll-timeout")
    p.add_argument("--hang-budget")
    p.add_argument("--split-threshold", type=int)
    p.add_argument("--max-execs", type=int)
    p.add_argument("--prompts-dir")
    p.add_argument("--harvest-examples", metavar="DIR")
    p.add_argument("--benchmark", help="name recorded in query logs (default: target)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semfuzz", description="LLM-guided mutation-based fuzzing")
    parser.add_argument("--version", action="version", version=f"semfuzz {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run a fuzzing campaign")
    _add_campaign_flags(p)
    p.add_argument("--deterministic-time", action="store_true", default=None)
    p.add_argument("--trials", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out")
    p.add_argument("--baseline", help="run directory to compute CIP against")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve-mutator", help="run the mutation service against a remote broker")
    _add_campaign_flags(p)
    p.add_argument("--log", default="log.jsonl")
    p.add_argument("--max-messages", type=int, help="exit after handling this many messages")
    p.set_defaults(func=cmd_serve_mutator)

    p = sub.add_parser("broker", help="run the bundled RESP broker")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_broker)

    p = sub.add_parser("analyze", help="summarize a JSONL query log")
    p.add_argument("log")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="render report files for a run directory")
    p.add_argument("run_dir")
    p.add_argument("--baseline")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", help="CIP per coverage class, second run as baseline")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("targets", help="list bundled targets")
    p.set_defaults(func=cmd_targets)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e.key}: {str(e).split(': ', 1)[-1]}", file=sys.stderr)
        return EXIT_CONFIG
    except TargetMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:  # runtime failure
        log.debug("unhandled", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
