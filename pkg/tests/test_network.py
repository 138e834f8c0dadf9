"""End-to-end socket tests: real admin, real miners, scripted edge cases."""

from __future__ import annotations

import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import pytest

from chainsim.admin import (
    AdminServer,
    ConsensusTimeout,
    RegistrationTimeout,
    SimulationConfig,
    create_genesis,
)
from chainsim.blocks import Block, make_placeholder
from chainsim.miner import MinerNode
from chainsim.netio import BufferedConn
from chainsim.protocol import msg_block, msg_chain, msg_last_block, msg_register

GENESIS = create_genesis()


def run_network(
    config: SimulationConfig,
    hashpowers: list[float],
    seed_offset: int = 0,
    extra_delay_ms: int = 0,
    **admin_kw,
) -> tuple[dict, list[dict]]:
    """One full in-process run: admin thread plus one thread per miner."""
    server = AdminServer(config, port=0, **admin_kw)
    with ThreadPoolExecutor(max_workers=config.num_miners + 1) as pool:
        admin_fut = pool.submit(server.run)
        miner_futs = [
            pool.submit(
                MinerNode(
                    "127.0.0.1",
                    server.port,
                    listen_port=0,
                    hashpower=hp,
                    seed=seed_offset + i,
                    extra_delay_ms=extra_delay_ms,
                ).run
            )
            for i, hp in enumerate(hashpowers)
        ]
        report = admin_fut.result(timeout=60)
        stats = [f.result(timeout=60) for f in miner_futs]
    return report, stats


class ScriptedMiner(threading.Thread):
    """Protocol-level fake miner for exercising admin edge cases."""

    def __init__(
        self,
        admin_port: int,
        listen_port: int,
        hashpower: float = 10.0,
        last_block: Block | None = None,
        chain: list[Block] | None = None,
        blocks_during_mining: tuple[Block, ...] = (),
        answer_chain_request: bool = True,
    ):
        super().__init__(daemon=True)
        self.admin_port = admin_port
        self.listen_port = listen_port
        self.hashpower = hashpower
        self.last_block = last_block
        self.chain = chain
        self.blocks_during_mining = blocks_during_mining
        self.answer_chain_request = answer_chain_request
        self.miner_id: int | None = None
        self.outcome: str | None = None
        self.got_chain_request = False
        self.error: Exception | None = None

    def run(self) -> None:
        try:
            self._script()
        except Exception as exc:  # recorded for the test to assert on
            self.error = exc

    def _script(self) -> None:
        sock = socket.create_connection(("127.0.0.1", self.admin_port), timeout=5)
        conn = BufferedConn(sock)
        conn.send(msg_register(self.listen_port, self.hashpower))
        ack = conn.next_message(10.0)
        self.miner_id = ack.payload["miner_id"]
        for want in ("MINER_INFO", "SIM_START", "GENESIS", "TX_POOL"):
            msg = conn.next_message(10.0)
            assert msg.type == want, f"expected {want}, got {msg.type}"
        for blk in self.blocks_during_mining:
            conn.send(msg_block(blk))
        msg = conn.next_message(30.0)
        assert msg.type == "SIM_END", f"expected SIM_END, got {msg.type}"
        conn.send(msg_last_block(self.miner_id, self.last_block or GENESIS))
        while True:
            msg = conn.next_message(10.0)
            if msg.type == "CHAIN_REQUEST":
                self.got_chain_request = True
                if self.answer_chain_request:
                    conn.send(msg_chain(self.miner_id, self.chain or [GENESIS]))
            elif msg.type in ("CONSENSUS_RESULT", "DISCARD"):
                self.outcome = msg.type
                break
        conn.close()


def quick_config(n: int, **kw) -> SimulationConfig:
    base = dict(num_miners=n, duration=1.0, interval=12.42, seed=1, time_scale=100.0)
    base.update(kw)
    return SimulationConfig(**base)


def test_two_miners_agree_end_to_end():
    config = SimulationConfig(
        num_miners=2, duration=30.0, interval=2.0, seed=7, time_scale=200.0
    )
    report, stats = run_network(config, [10.0, 20.0])
    assert not report["discarded"]
    assert report["total_blocks"] > 0
    chains = {tuple(s["final_chain_ids"]) for s in stats}
    assert len(chains) == 1
    assert list(chains.pop()) == report["final_chain_ids"]
    acct = report["frame_accounting"]
    assert acct["block_frames_during_mining"] == 0
    assert acct["last_block_frames"] == 2
    assert acct["chain_frames"] == 1
    assert sum(m["block_share_pct"] for m in report["miners"]) == pytest.approx(100.0, abs=0.1)


def test_seven_miners_with_table_powers():
    powers = [17.0, 15.8, 12.9, 11.0, 6.6, 6.3, 30.4]
    config = SimulationConfig(
        num_miners=7, duration=60.0, interval=3.0, seed=11, time_scale=300.0
    )
    report, stats = run_network(config, powers)
    assert report["total_hashpower"] == pytest.approx(100.0)
    assert sorted(m["miner_id"] for m in report["miners"]) == list(range(1, 8))
    assert not report["discarded"]
    assert len({tuple(s["final_chain_ids"]) for s in stats}) == 1
    assert report["frame_accounting"]["last_block_frames"] == 7
    assert report["frame_accounting"]["chain_frames"] == 1
    assert report["frame_accounting"]["block_frames_during_mining"] == 0


def test_single_miner_throughput_across_seeds():
    totals = []
    for seed in range(20):
        config = SimulationConfig(
            num_miners=1, duration=100.0, interval=12.42, seed=seed, time_scale=500.0
        )
        report, stats = run_network(config, [15.0], seed_offset=seed * 100)
        assert not report["discarded"]
        assert report["miners"][0]["block_share_pct"] in (0.0, pytest.approx(100.0))
        assert stats[0]["tally"]["uncled"] == 0
        totals.append(report["total_blocks"])
    mean = sum(totals) / len(totals)
    expectation = 100.0 / 12.42
    assert expectation * 0.8 <= mean <= expectation * 1.2


def test_random_hashpower_flag_samples_in_range():
    node = MinerNode("127.0.0.1", 1, listen_port=0, hashpower=None, seed=5)
    assert 0.0 < node.hashpower <= 30.0
    again = MinerNode("127.0.0.1", 1, listen_port=0, hashpower=None, seed=5)
    assert again.hashpower == node.hashpower


def test_registration_timeout_when_miner_missing():
    server = AdminServer(quick_config(2), port=0, registration_timeout=0.6)
    with ThreadPoolExecutor(max_workers=1) as pool:
        fut = pool.submit(server.run)
        scripted = ScriptedMiner(server.port, listen_port=7001)
        scripted.start()
        with pytest.raises(RegistrationTimeout):
            fut.result(timeout=10)
    scripted.join(timeout=5)
    assert scripted.error is not None  # connection died with the admin


def test_duplicate_registration_rejected():
    server = AdminServer(quick_config(2), port=0, registration_timeout=5.0)
    with ThreadPoolExecutor(max_workers=1) as pool:
        fut = pool.submit(server.run)
        first = ScriptedMiner(server.port, listen_port=7100)
        first.start()
        time.sleep(0.3)
        dup = ScriptedMiner(server.port, listen_port=7100)
        dup.start()
        dup.join(timeout=5)
        assert dup.error is not None  # admin closed the duplicate
        second = ScriptedMiner(server.port, listen_port=7101)
        second.start()
        report = fut.result(timeout=30)
        first.join(timeout=5)
        second.join(timeout=5)
    assert not report["discarded"]
    assert second.miner_id == 2
    assert report["total_blocks"] == 0  # nobody mined anything


def test_block_frames_to_admin_are_counted_as_violations():
    stray = Block(id="s1", parent_id=GENESIS.id, depth=1, miner_id=1, blocktime=0.5)
    server = AdminServer(quick_config(1, duration=20.0), port=0)
    with ThreadPoolExecutor(max_workers=1) as pool:
        fut = pool.submit(server.run)
        scripted = ScriptedMiner(server.port, listen_port=7200, blocks_during_mining=(stray,))
        scripted.start()
        report = fut.result(timeout=30)
        scripted.join(timeout=5)
    assert scripted.error is None
    assert report["frame_accounting"]["block_frames_during_mining"] == 1


def test_discard_when_winning_chain_has_placeholders():
    tip = Block(id="deep", parent_id="hole", depth=2, miner_id=1, blocktime=0.9)
    broken = [GENESIS, make_placeholder("hole", 1), tip]
    server = AdminServer(quick_config(2), port=0)
    with ThreadPoolExecutor(max_workers=1) as pool:
        fut = pool.submit(server.run)
        bad = ScriptedMiner(server.port, listen_port=7300, last_block=tip, chain=broken)
        honest = ScriptedMiner(server.port, listen_port=7301)
        bad.start()
        honest.start()
        report = fut.result(timeout=30)
        bad.join(timeout=5)
        honest.join(timeout=5)
    assert report["discarded"] is True
    assert "placeholder" in report["reason"]
    assert bad.outcome == "DISCARD"
    assert honest.outcome == "DISCARD"
    assert bad.got_chain_request  # deepest tip won, then failed the check


def test_winner_chain_timeout_discards_run():
    tip = Block(id="t1", parent_id=GENESIS.id, depth=1, miner_id=1, blocktime=0.5)
    server = AdminServer(quick_config(2), port=0, consensus_timeout=0.8)
    with ThreadPoolExecutor(max_workers=1) as pool:
        fut = pool.submit(server.run)
        silent = ScriptedMiner(
            server.port, listen_port=7400, last_block=tip, answer_chain_request=False
        )
        honest = ScriptedMiner(server.port, listen_port=7401)
        silent.start()
        honest.start()
        report = fut.result(timeout=30)
        silent.join(timeout=5)
        honest.join(timeout=5)
    assert report["discarded"] is True
    assert "never sent its chain" in report["reason"]
    assert honest.outcome == "DISCARD"


def test_tie_broken_by_earliest_blocktime():
    early = Block(id="e1", parent_id=GENESIS.id, depth=1, miner_id=2, blocktime=0.3)
    late = Block(id="l1", parent_id=GENESIS.id, depth=1, miner_id=1, blocktime=0.7)
    server = AdminServer(quick_config(2), port=0)
    with ThreadPoolExecutor(max_workers=1) as pool:
        fut = pool.submit(server.run)
        slow = ScriptedMiner(server.port, listen_port=7500, last_block=late, chain=[GENESIS, late])
        slow.start()
        time.sleep(0.3)  # make sure the late-tip miner registers first (id 1)
        fast = ScriptedMiner(server.port, listen_port=7501, last_block=early, chain=[GENESIS, early])
        fast.start()
        report = fut.result(timeout=30)
        slow.join(timeout=5)
        fast.join(timeout=5)
    assert fast.got_chain_request and not slow.got_chain_request
    assert report["winner_id"] == fast.miner_id == 2
    assert report["final_chain_ids"] == [GENESIS.id, "e1"]
