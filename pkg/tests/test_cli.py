import json
from fractions import Fraction
from pathlib import Path

import pytest

from thinkey.cli import main
from thinkey.committee import FailureParams, failure_probability


def write_scenario(tmp_path: Path, **overrides) -> Path:
    config = dict(
        seed=5, shard_count=2, nodes_total=40, committee_size=4, epoch_rounds=6,
        tx_count=60, cross_chain_ratio=0.5, block_size_limit=10, account_count=20,
    )
    config.update(overrides)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(config))
    return path


def test_run_writes_artifacts_and_exits_zero(tmp_path, capsys):
    scenario = write_scenario(tmp_path)
    out = tmp_path / "out"
    assert main(["run", str(scenario), "--out-dir", str(out)]) == 0
    assert (out / "report.csv").exists()
    assert (out / "manifest.json").exists()
    assert (out / "trace.jsonl").exists()
    assert (out / "relay_trace.jsonl").exists()
    report = (out / "report.csv").read_text()
    assert report.splitlines()[0].startswith("shard_count,tps")
    assert "settled=60" in capsys.readouterr().out


def test_rerun_from_manifest_reproduces_report(tmp_path):
    scenario = write_scenario(tmp_path)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["run", str(scenario), "--out-dir", str(out1)]) == 0
    manifest = out1 / "manifest.json"
    assert main(["run", str(manifest), "--out-dir", str(out2)]) == 0
    assert (out1 / "report.csv").read_bytes() == (out2 / "report.csv").read_bytes()
    assert (out1 / "trace.jsonl").read_bytes() == (out2 / "trace.jsonl").read_bytes()


def test_env_seed_override(tmp_path, monkeypatch):
    scenario = write_scenario(tmp_path)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["run", str(scenario), "--out-dir", str(out1)]) == 0
    monkeypatch.setenv("THINKEY_SEED", "99")
    assert main(["run", str(scenario), "--out-dir", str(out2)]) == 0
    m2 = json.loads((out2 / "manifest.json").read_text())
    assert m2["scenario"]["seed"] == 99
    assert (out1 / "report.csv").read_text() != (out2 / "report.csv").read_text()


def test_invalid_scenario_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"shard_count": 0}))
    assert main(["run", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    assert "shard_count" in capsys.readouterr().err


def test_gen_workload_roundtrip(tmp_path, capsys):
    out = tmp_path / "wl.jsonl"
    code = main(["gen-workload", "--accounts", "40", "--tx-count", "100",
                 "--cross-chain-ratio", "0.3", "--shards", "2",
                 "--seed", "3", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 100
    row = json.loads(lines[0])
    assert {"from", "to", "kind", "amount", "nonce", "sig"} <= set(row)
    assert "100 txs" in capsys.readouterr().out


def test_run_with_workload_file(tmp_path):
    wl = tmp_path / "wl.jsonl"
    main(["gen-workload", "--accounts", "20", "--tx-count", "30",
          "--cross-chain-ratio", "0.5", "--shards", "2", "--seed", "3",
          "--out", str(wl)])
    scenario = write_scenario(tmp_path, workload_file=str(wl), tx_count=30)
    out = tmp_path / "out"
    assert main(["run", str(scenario), "--out-dir", str(out)]) == 0


def test_analyze_committee_matches_library(capsys):
    assert main(["analyze", "committee", "--N", "20", "--n", "5", "--m", "16",
                 "--lambda", "1/4", "--rho", "0.2"]) == 0
    payload = json.loads(capsys.readouterr().out)
    expected = failure_probability(
        FailureParams(20, 5, 16, Fraction(1, 4), Fraction(1, 5))
    )
    assert payload["p_single"] == pytest.approx(float(expected))
    assert payload["p_system_bound"] == pytest.approx(min(1.0, 16 * float(expected)))
    num, den = payload["p_single_exact"].split("/")
    assert Fraction(int(num), int(den)) == expected


def test_analyze_committee_rejects_bad_params(capsys):
    assert main(["analyze", "committee", "--N", "10", "--n", "20"]) == 2


def test_analyze_speedup(capsys):
    assert main(["analyze", "speedup", "--p", "0.5", "--k", "16", "--r", "4"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["speedup"] == 3.2
    assert payload["scalability_approx"] == 3.2 / 16


def test_analyze_speedup_log_guard(capsys):
    assert main(["analyze", "speedup", "--p", "0.5", "--k", "16", "--r", "1",
                 "--f", "log"]) == 2


def test_summarize_reduces_trace(tmp_path, capsys):
    scenario = write_scenario(tmp_path)
    out = tmp_path / "out"
    main(["run", str(scenario), "--out-dir", str(out)])
    report = tmp_path / "summary.csv"
    assert main(["summarize", "--in", str(out / "trace.jsonl"),
                 "--out", str(report)]) == 0
    text = report.read_text()
    assert text.splitlines()[0].startswith("shard_count,tps")
    assert len(text.splitlines()) == 2
