import json
import subprocess
import sys
import threading

import pytest

from semfuzz.broker import C2P, P2C, RespBroker
from semfuzz.cli import build_config, main, normalize_settings, parse_duration
from semfuzz.model import ConfigError

FAST = ["--deterministic-time", "--duration", "0.3s", "--backend", "mock-mutator", "--rng-seed", "7"]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    for var in ("SEMFUZZ_BROKER_ADDR", "SEMFUZZ_BACKEND_URL", "SEMFUZZ_MODEL"):
        monkeypatch.delenv(var, raising=False)
    monkeypatch.chdir(tmp_path)


@pytest.mark.parametrize("text,seconds", [("10s", 10), ("500ms", 0.5), ("2m", 120), ("1h", 3600), ("3", 3), (1.5, 1.5)])
def test_parse_duration(text, seconds):
    assert parse_duration(text) == seconds


def test_parse_duration_rejects():
    with pytest.raises(ConfigError):
        parse_duration("ten seconds")


def test_run_writes_artifacts(tmp_path, capsys):
    assert main(["run", *FAST, "--out", "r"]) == 0
    out = tmp_path / "r"
    for name in ("campaign.json", "report.json", "report.md", "timeline.csv", "log.jsonl"):
        assert (out / name).is_file(), name
    assert any((out / "queue").iterdir())
    report = json.loads((out / "report.json").read_text())
    assert report["target"] == "chunkfmt" and report["llm_derived_execs"] > 0
    assert report["summaries"][0]["shot"] == 0
    assert "execs" in capsys.readouterr().out


def test_bad_shots_exit_2(capsys):
    assert main(["run", *FAST, "--shots", "2"]) == 2
    err = capsys.readouterr().err
    assert "shots" in err and "{0,1,3}" in err


def test_bad_flag_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["run", "--bogus"])
    assert e.value.code == 2


def test_missing_seed_dir_exit_2(capsys):
    assert main(["run", *FAST, "--seed-dir", "nowhere"]) == 2
    assert "seed-dir" in capsys.readouterr().err


def test_unreachable_broker_exit_1(capsys):
    assert main(["run", *FAST, "--broker", "127.0.0.1:1"]) == 1


def test_config_file_and_flag_precedence(tmp_path):
    (tmp_path / "c.toml").write_text('duration = "0.2s"\nshots = 3\nbackend = "mock-identity"\nrng-seed = 5\n')
    assert main(["run", "--config", "c.toml", "--deterministic-time", "--shots", "1", "--out", "r"]) == 0
    cfg = json.loads((tmp_path / "r" / "campaign.json").read_text())["config"]
    assert cfg["shots"] == 1 and cfg["duration"] == 0.2 and cfg["rng_seed"] == 5


def test_env_below_flags(monkeypatch, tmp_path):
    monkeypatch.setenv("SEMFUZZ_BROKER_ADDR", "127.0.0.1:1")
    assert main(["run", *FAST, "--broker", "none", "--out", "r"]) == 0
    data = json.loads((tmp_path / "r" / "campaign.json").read_text())
    assert data["config"]["broker"] == "none" and data["llm_derived_execs"] == 0


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "c.toml").write_text("colour = 1\n")
    assert main(["run", "--config", "c.toml"]) == 2
    assert "colour" in capsys.readouterr().err


def test_normalize_settings_types():
    s = normalize_settings({"hang_budget": "50ms", "target-command": "./t @@", "deterministic-time": True})
    assert s == {"hang-budget": 0.05, "target-command": ("./t", "@@"), "deterministic-time": True}
    with pytest.raises(ConfigError):
        normalize_settings({"deterministic-time": "yes"})
    with pytest.raises(ConfigError) as e:
        build_config({"backend": "gpt"})
    assert e.value.key == "backend"


def test_compare_and_report(tmp_path, capsys):
    assert main(["run", *FAST, "--out", "a"]) == 0
    assert main(["run", *FAST, "--broker", "none", "--out", "b"]) == 0
    assert main(["run", *FAST, "--target", "minijson", "--out", "j"]) == 0
    capsys.readouterr()
    assert main(["compare", "a", "a", "--out", "cmp"]) == 0
    assert set(json.loads((tmp_path / "cmp" / "compare.json").read_text())["cip"].values()) == {0.0}
    assert main(["compare", "a", "j"]) == 2
    assert main(["report", "a", "--baseline", "b", "--out", "rep"]) == 0
    data = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert data["baseline"] == "b" and set(data["cip"]) == {"function", "line", "branch", "region"}
    assert main(["report", "a", "--baseline", "j"]) == 2


def test_run_with_baseline_dir(tmp_path):
    assert main(["run", *FAST, "--broker", "none", "--out", "b"]) == 0
    assert main(["run", *FAST, "--out", "a", "--baseline", "b"]) == 0
    data = json.loads((tmp_path / "a" / "report.json").read_text())
    assert data["cip"] is not None
    assert data["summaries"][0]["cip"] == data["cip"]


def test_analyze(tmp_path, capsys):
    assert main(["run", *FAST, "--out", "a"]) == 0
    capsys.readouterr()
    assert main(["analyze", "a/log.jsonl", "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["skipped"] == 0 and data["summaries"][0]["benchmark"] == "chunkfmt"
    assert main(["analyze", "a/log.jsonl"]) == 0
    assert capsys.readouterr().out.startswith("benchmark\tshot")
    assert main(["analyze", "missing.jsonl"]) == 1


def test_trials(tmp_path):
    assert main(["run", *FAST, "--trials", "2", "--out", "t"]) == 0
    agg = json.loads((tmp_path / "t" / "aggregate.json").read_text())
    assert [t["rng_seed"] for t in agg["trials"]] == [7, 8]
    assert (tmp_path / "t" / "trial-1" / "report.json").is_file()


def test_targets(capsys):
    assert main(["targets"]) == 0
    out = capsys.readouterr().out
    assert "chunkfmt" in out and "minijson" in out


def test_serve_mutator(resp_server, tmp_path):
    _, port = resp_server
    producer = RespBroker("127.0.0.1", port)
    for i in range(5):
        producer.push(C2P, bytes([i]) * 3)
    rc = []
    t = threading.Thread(target=lambda: rc.append(main(
        ["serve-mutator", "--broker", f"127.0.0.1:{port}", "--max-messages", "5", "--log", "svc.jsonl"])))
    t.start()
    t.join(30)
    assert rc == [0]
    assert sorted(producer.pop(P2C) for _ in range(5)) == [bytes([i]) * 3 for i in range(5)]
    assert len((tmp_path / "svc.jsonl").read_text().splitlines()) == 5
    producer.close()


def test_serve_mutator_needs_remote_broker(capsys):
    assert main(["serve-mutator", "--max-messages", "1"]) == 2


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "semfuzz.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("semfuzz ")
