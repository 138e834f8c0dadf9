"""Harness and CLI behavior: spec parsing, aggregation, retries, fairness."""

import json
import subprocess
import sys

import pytest

from chainsim.harness import (
    ExperimentFailure,
    ExperimentSpec,
    fairness_check,
    load_spec,
    render_experiment_table,
    render_shares_csv,
    run_experiment,
    run_seed_for,
)


def make_spec(tmp_path, **overrides) -> ExperimentSpec:
    base = dict(
        mode="logical",
        num_miners=3,
        duration=300.0,
        interval=12.42,
        seed=11,
        runs=3,
        hashpowers=(10.0, 20.0, 30.0),
        out_dir=str(tmp_path / "out"),
    )
    base.update(overrides)
    return ExperimentSpec(**base)


def test_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        make_spec(tmp_path, mode="quantum")
    with pytest.raises(ValueError):
        make_spec(tmp_path, runs=0)
    with pytest.raises(ValueError):
        make_spec(tmp_path, hashpowers=(1.0, 2.0))


def test_load_spec_round_trip(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(
        json.dumps(
            {
                "mode": "logical",
                "num_miners": 2,
                "duration": 100.0,
                "interval": 12.42,
                "seed": 5,
                "runs": 2,
                "hashpowers": [3.0, 9.0],
                "out_dir": str(tmp_path / "o"),
            }
        )
    )
    spec = load_spec(str(path))
    assert spec.num_miners == 2
    assert spec.hashpowers == (3.0, 9.0)

    path.write_text(json.dumps({"mode": "logical", "num_miners": 1, "duration": 1.0,
                                "interval": 1.0, "seed": 1, "runs": 1,
                                "hashpowers": "random"}))
    assert load_spec(str(path)).hashpowers is None

    path.write_text(json.dumps({"mode": "logical", "num_miners": 1, "duration": 1.0,
                                "interval": 1.0, "seed": 1, "runs": 1, "bogus": True}))
    with pytest.raises(ValueError, match="bogus"):
        load_spec(str(path))


def test_retry_seeds_are_disjoint():
    first = {run_seed_for(100, r, 0) for r in range(50)}
    retried = {run_seed_for(100, r, a) for r in range(50) for a in (1, 2, 3)}
    assert not first & retried


def test_logical_experiment_outputs(tmp_path):
    spec = make_spec(tmp_path)
    aggregate = run_experiment(spec)
    out = tmp_path / "out"
    assert (out / "aggregate.json").exists()
    assert (out / "table.txt").exists()
    assert (out / "shares.csv").exists()
    for r in range(spec.runs):
        assert (out / f"run_{r:03d}.json").exists()
    assert aggregate["runs"] == 3
    assert aggregate["retries"] == 0
    assert len(aggregate["per_run"]) == 3
    assert abs(sum(aggregate["mean_block_share_pct"]) - 100.0) < 0.1
    assert abs(sum(aggregate["mean_hash_share_pct"]) - 100.0) < 0.1
    # hash shares follow from the explicit powers 10/20/30
    assert aggregate["mean_hash_share_pct"][2] == pytest.approx(50.0)
    table = render_experiment_table(aggregate)
    assert "runs: 3" in table
    csv = render_shares_csv(aggregate)
    assert csv.startswith("miner,hash_share_pct,mean_block_share_pct")
    assert len(csv.strip().splitlines()) == 4


def test_logical_aggregate_is_deterministic(tmp_path):
    agg_a = run_experiment(make_spec(tmp_path, out_dir=str(tmp_path / "a")))
    agg_b = run_experiment(make_spec(tmp_path, out_dir=str(tmp_path / "b")))
    assert json.dumps(agg_a, sort_keys=True) == json.dumps(agg_b, sort_keys=True)


def test_attempt_budget_exhaustion(tmp_path, monkeypatch):
    spec = make_spec(tmp_path, runs=2)
    calls = []

    def always_discarded(spec_, run_seed, run_idx, attempt):
        calls.append(run_seed)
        return {"discarded": True, "seed": run_seed}

    monkeypatch.setattr("chainsim.harness._run_once", always_discarded)
    with pytest.raises(ExperimentFailure, match="budget"):
        run_experiment(spec)
    assert len(calls) == 3 * spec.runs
    assert len(set(calls)) == len(calls)  # every retry used a fresh seed


def test_retry_then_success(tmp_path, monkeypatch):
    spec = make_spec(tmp_path, runs=2)
    real_run = ExperimentSpec.config  # build real reports via the engine
    from chainsim.engine import run_logical

    fails = {0: 2, 1: 0}  # run 0 is discarded twice, run 1 never

    def flaky(spec_, run_seed, run_idx, attempt):
        if attempt < fails[run_idx]:
            return {"discarded": True, "seed": run_seed}
        report = run_logical(spec_.config(run_seed), list(spec_.hashpowers)).report
        for row in report["miners"]:
            row["slot"] = row["port"]
        return report

    monkeypatch.setattr("chainsim.harness._run_once", flaky)
    aggregate = run_experiment(spec)
    assert aggregate["runs"] == 2
    assert aggregate["retries"] == 2
    assert real_run is ExperimentSpec.config


def test_fairness_check_math():
    aggregate = {
        "num_miners": 2,
        "mean_hash_share_pct": [40.0, 60.0],
        "mean_block_share_pct": [42.5, 57.5],
        "deviation_pp": [2.5, -2.5],
    }
    ok = fairness_check(aggregate, tolerance_pp=3.0)
    assert ok["ok"] and all(r["ok"] for r in ok["miners"])
    tight = fairness_check(aggregate, tolerance_pp=2.0)
    assert not tight["ok"]
    assert [r["ok"] for r in tight["miners"]] == [False, False]


def test_cli_harness_run_and_check(tmp_path):
    out_dir = tmp_path / "exp"
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(
        json.dumps(
            {
                "mode": "logical",
                "num_miners": 2,
                "duration": 400.0,
                "interval": 12.42,
                "seed": 21,
                "runs": 4,
                "hashpowers": [15.0, 15.0],
                "out_dir": str(out_dir),
            }
        )
    )
    run = subprocess.run(
        [sys.executable, "-m", "chainsim", "harness", "run", "--spec", str(spec_path)],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert run.returncode == 0, run.stderr
    assert "mean total blocks" in run.stdout

    check = subprocess.run(
        [
            sys.executable,
            "-m",
            "chainsim",
            "harness",
            "check",
            "--aggregate",
            str(out_dir / "aggregate.json"),
            "--tolerance-pp",
            "30",
        ],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert check.returncode == 0, check.stderr
    assert "fairness within 30.0 pp: yes" in check.stdout

    impossible = subprocess.run(
        [
            sys.executable,
            "-m",
            "chainsim",
            "harness",
            "check",
            "--aggregate",
            str(out_dir / "aggregate.json"),
            "--tolerance-pp",
            "-1",
        ],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert impossible.returncode == 1


def test_cli_rejects_bad_miner_address():
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "chainsim",
            "miner",
            "--admin",
            "nocolon",
            "--listen-port",
            "19000",
            "--hashpower",
            "5",
            "--seed",
            "1",
        ],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 2
    assert "HOST:PORT" in proc.stderr


def test_network_experiment_single_run(tmp_path):
    spec = make_spec(
        tmp_path,
        mode="network",
        num_miners=2,
        duration=30.0,
        time_scale=100.0,
        runs=1,
        seed=77,
        hashpowers=(12.0, 24.0),
    )
    aggregate = run_experiment(spec)
    assert aggregate["runs"] == 1
    assert aggregate["mode"] == "network"
    run_record = aggregate["per_run"][0]
    assert run_record["seed"] == run_seed_for(77, 0, 0)
    assert run_record["total_blocks"] == len(run_record["final_chain_ids"]) - 1
    work = tmp_path / "out" / "work" / "run_000_a0"
    assert (work / "report.json").exists()
    assert (work / "miner_0.json").exists()
    assert (work / "miner_1.json").exists()
    stats = json.loads((work / "miner_0.json").read_text())
    assert stats["discarded"] is False
