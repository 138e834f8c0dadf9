"""Experiment driver: repeated runs, aggregation, fairness checking.

Network mode launches one admin process and one process per miner and
collects their report files; logical mode calls the in-process engine.
Discarded runs are retried on a fresh seed, within a global attempt
budget of three times the requested run count.
"""

from __future__ import annotations

import json
import os
import socket
import subprocess
import sys
from dataclasses import dataclass

from .admin import EXIT_DISCARDED, SimulationConfig
from .engine import DEFAULT_DELAY_RANGE, run_logical, slot_seed

MODES = ("network", "logical")


class ExperimentFailure(RuntimeError):
    """The experiment could not produce the requested number of runs."""


@dataclass(frozen=True)
class ExperimentSpec:
    mode: str
    num_miners: int
    duration: float
    interval: float
    seed: int
    runs: int
    time_scale: float = 1.0
    tx_pool_size: int = 100
    hashpowers: tuple[float, ...] | None = None  # None means sampled per run
    out_dir: str = "experiment-out"
    base_port: int = 0  # 0 means probe for a free block of ports
    extra_delay_ms: int = 0
    delay_range: tuple[float, float] = DEFAULT_DELAY_RANGE

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.hashpowers is not None and len(self.hashpowers) != self.num_miners:
            raise ValueError("hashpowers list length must equal num_miners")

    def config(self, run_seed: int) -> SimulationConfig:
        return SimulationConfig(
            num_miners=self.num_miners,
            duration=self.duration,
            interval=self.interval,
            seed=run_seed,
            time_scale=self.time_scale,
            tx_pool_size=self.tx_pool_size,
        )


def load_spec(path: str) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    powers = raw.get("hashpowers", "random")
    if powers == "random":
        powers = None
    elif isinstance(powers, list):
        powers = tuple(float(h) for h in powers)
    else:
        raise ValueError("hashpowers must be a list or the string 'random'")
    known = {
        "mode",
        "num_miners",
        "duration",
        "interval",
        "seed",
        "runs",
        "time_scale",
        "tx_pool_size",
        "out_dir",
        "base_port",
        "extra_delay_ms",
        "delay_range",
    }
    unknown = set(raw) - known - {"hashpowers"}
    if unknown:
        raise ValueError(f"unknown spec fields: {sorted(unknown)}")
    kwargs = {k: raw[k] for k in known if k in raw}
    if "delay_range" in kwargs:
        kwargs["delay_range"] = tuple(kwargs["delay_range"])
    return ExperimentSpec(hashpowers=powers, **kwargs)


def run_seed_for(spec_seed: int, run_idx: int, attempt: int) -> int:
    """Seed for a given run; retries move to a far-away seed."""
    return spec_seed + run_idx + 1_000_000 * attempt


def run_experiment(spec: ExperimentSpec) -> dict:
    """Execute the spec; returns (and writes) the aggregate record."""
    os.makedirs(spec.out_dir, exist_ok=True)
    budget = 3 * spec.runs
    attempts = 0
    retries = 0
    reports: list[dict] = []
    for run_idx in range(spec.runs):
        attempt = 0
        while True:
            if attempts >= budget:
                raise ExperimentFailure(
                    f"attempt budget exhausted: {attempts} attempts for "
                    f"{len(reports)}/{spec.runs} accepted runs ({retries} discards)"
                )
            attempts += 1
            run_seed = run_seed_for(spec.seed, run_idx, attempt)
            report = _run_once(spec, run_seed, run_idx, attempt)
            if not report["discarded"]:
                break
            retries += 1
            attempt += 1
        report["run_idx"] = run_idx
        reports.append(report)
        _write_json(report, os.path.join(spec.out_dir, f"run_{run_idx:03d}.json"))
    aggregate = _aggregate(spec, reports, retries)
    _write_json(aggregate, os.path.join(spec.out_dir, "aggregate.json"))
    with open(os.path.join(spec.out_dir, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(render_experiment_table(aggregate) + "\n")
    with open(os.path.join(spec.out_dir, "shares.csv"), "w", encoding="utf-8") as fh:
        fh.write(render_shares_csv(aggregate))
    return aggregate


def _run_once(spec: ExperimentSpec, run_seed: int, run_idx: int, attempt: int) -> dict:
    if spec.mode == "logical":
        powers = list(spec.hashpowers) if spec.hashpowers is not None else None
        report = run_logical(spec.config(run_seed), powers, spec.delay_range).report
        for row in report["miners"]:
            row["slot"] = row["port"]  # logical roster ports are slot numbers
        return report
    return _run_network(spec, run_seed, run_idx, attempt)


def _run_network(spec: ExperimentSpec, run_seed: int, run_idx: int, attempt: int) -> dict:
    ports = _allocate_ports(spec.base_port, spec.num_miners + 1)
    work = os.path.join(spec.out_dir, "work", f"run_{run_idx:03d}_a{attempt}")
    os.makedirs(work, exist_ok=True)
    report_path = os.path.join(work, "report.json")
    admin_cmd = [
        sys.executable,
        "-m",
        "chainsim",
        "admin",
        "--port",
        str(ports[0]),
        "--num-miners",
        str(spec.num_miners),
        "--sim-time",
        str(spec.duration),
        "--block-interval",
        str(spec.interval),
        "--seed",
        str(run_seed),
        "--time-scale",
        str(spec.time_scale),
        "--tx-pool-size",
        str(spec.tx_pool_size),
        "--report-out",
        report_path,
    ]
    miner_cmds = []
    stats_paths = []
    for i in range(spec.num_miners):
        stats_path = os.path.join(work, f"miner_{i}.json")
        stats_paths.append(stats_path)
        cmd = [
            sys.executable,
            "-m",
            "chainsim",
            "miner",
            "--admin",
            f"127.0.0.1:{ports[0]}",
            "--listen-port",
            str(ports[1 + i]),
            "--seed",
            str(slot_seed(run_seed, i)),
            "--stats-out",
            stats_path,
        ]
        if spec.hashpowers is not None:
            cmd += ["--hashpower", str(spec.hashpowers[i])]
        else:
            cmd += ["--hashpower-random"]
        if spec.extra_delay_ms:
            cmd += ["--extra-delay-ms", str(spec.extra_delay_ms)]
        miner_cmds.append(cmd)

    procs: list[subprocess.Popen] = []
    logs = []
    try:
        admin_log = open(os.path.join(work, "admin.log"), "w", encoding="utf-8")
        logs.append(admin_log)
        admin_proc = subprocess.Popen(admin_cmd, stdout=admin_log, stderr=subprocess.STDOUT)
        procs.append(admin_proc)
        for i, cmd in enumerate(miner_cmds):
            miner_log = open(os.path.join(work, f"miner_{i}.log"), "w", encoding="utf-8")
            logs.append(miner_log)
            procs.append(subprocess.Popen(cmd, stdout=miner_log, stderr=subprocess.STDOUT))
        wall_budget = spec.duration / spec.time_scale + 120.0
        try:
            admin_rc = admin_proc.wait(timeout=wall_budget)
            for proc in procs[1:]:
                proc.wait(timeout=60.0)
        except subprocess.TimeoutExpired as exc:
            raise ExperimentFailure(f"run with seed {run_seed} hung: {exc}") from exc
    finally:
        for proc in procs:
            if proc.poll() is None:
                proc.kill()
        for fh in logs:
            fh.close()
    if admin_rc not in (0, EXIT_DISCARDED):
        raise ExperimentFailure(
            f"admin exited with status {admin_rc} for seed {run_seed}; see {work}/admin.log"
        )
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)
    port_to_slot = {ports[1 + i]: i for i in range(spec.num_miners)}
    for row in report["miners"]:
        row["slot"] = port_to_slot[row["port"]]
    miner_stats = []
    for path in stats_paths:
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                miner_stats.append(json.load(fh))
    report["miner_stats"] = miner_stats
    return report


def _allocate_ports(base_port: int, count: int) -> list[int]:
    """A block of ports known to be free right now."""
    if base_port:
        return [base_port + i for i in range(count)]
    socks = []
    try:
        for _ in range(count):
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            s.bind(("127.0.0.1", 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def _aggregate(spec: ExperimentSpec, reports: list[dict], retries: int) -> dict:
    n = spec.num_miners
    runs = len(reports)
    share_sums = [0.0] * n
    hash_sums = [0.0] * n
    per_run = []
    for report in reports:
        by_slot = {row["slot"]: row for row in report["miners"]}
        shares = [by_slot[i]["block_share_pct"] for i in range(n)]
        hashes = [by_slot[i]["hash_share_pct"] for i in range(n)]
        for i in range(n):
            share_sums[i] += shares[i]
            hash_sums[i] += hashes[i]
        per_run.append(
            {
                "run_idx": report["run_idx"],
                "seed": report["seed"],
                "total_blocks": report["total_blocks"],
                "winner_id": report["winner_id"],
                "block_share_pct": shares,
                "hash_share_pct": hashes,
                "final_chain_ids": report["final_chain_ids"],
            }
        )
    mean_share = [s / runs for s in share_sums]
    mean_hash = [h / runs for h in hash_sums]
    deviations = [mean_share[i] - mean_hash[i] for i in range(n)]
    return {
        "mode": spec.mode,
        "num_miners": n,
        "duration": spec.duration,
        "interval": spec.interval,
        "seed": spec.seed,
        "runs": runs,
        "retries": retries,
        "hashpowers": list(spec.hashpowers) if spec.hashpowers is not None else "random",
        "mean_total_blocks": sum(r["total_blocks"] for r in per_run) / runs,
        "mean_block_share_pct": mean_share,
        "mean_hash_share_pct": mean_hash,
        "deviation_pp": deviations,
        "max_abs_deviation_pp": max(abs(d) for d in deviations),
        "per_run": per_run,
    }


def fairness_check(aggregate: dict, tolerance_pp: float) -> dict:
    """Per-miner pass/fail on |mean block share - hash share| <= tolerance."""
    rows = []
    for i in range(aggregate["num_miners"]):
        deviation = aggregate["deviation_pp"][i]
        rows.append(
            {
                "slot": i,
                "hash_share_pct": aggregate["mean_hash_share_pct"][i],
                "mean_block_share_pct": aggregate["mean_block_share_pct"][i],
                "deviation_pp": deviation,
                "ok": abs(deviation) <= tolerance_pp,
            }
        )
    return {"tolerance_pp": tolerance_pp, "miners": rows, "ok": all(r["ok"] for r in rows)}


def render_experiment_table(aggregate: dict) -> str:
    lines = [
        f"{'miner':>5}  {'hash %':>7}  {'mean block %':>12}  {'deviation pp':>12}",
    ]
    for i in range(aggregate["num_miners"]):
        lines.append(
            f"{i:>5}  {aggregate['mean_hash_share_pct'][i]:>7.2f}"
            f"  {aggregate['mean_block_share_pct'][i]:>12.2f}"
            f"  {aggregate['deviation_pp'][i]:>12.2f}"
        )
    lines.append(
        f"runs: {aggregate['runs']} (retries {aggregate['retries']}), "
        f"mean total blocks: {aggregate['mean_total_blocks']:.1f}, "
        f"max |deviation|: {aggregate['max_abs_deviation_pp']:.2f} pp"
    )
    return "\n".join(lines)


def render_shares_csv(aggregate: dict) -> str:
    out = ["miner,hash_share_pct,mean_block_share_pct"]
    for i in range(aggregate["num_miners"]):
        out.append(
            f"{i},{aggregate['mean_hash_share_pct'][i]:.4f},"
            f"{aggregate['mean_block_share_pct'][i]:.4f}"
        )
    return "\n".join(out) + "\n"


def _write_json(record: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
