"""Admin server: registration rendezvous, bootstrap, and final consensus.

The admin never mines and never relays blocks. It brings the network up
(ids, roster, genesis, transaction pool), waits out the simulation,
then runs the cheap consensus: one tip block per miner in, one full
chain out, one result broadcast.
"""

from __future__ import annotations

import json
import logging
import random
import select
import socket
import time
from collections import Counter
from dataclasses import dataclass, field

from .blocks import ADMIN_ID, Block, StructuralError, Transaction, derive_block_id
from .chain import ConsensusEntry, select_consensus_winner, validate_chain
from .netio import BufferedConn, ConnectionClosed
from .protocol import (
    MinerRecord,
    ProtocolError,
    block_from_payload,
    chain_from_payload,
    msg_chain_request,
    msg_consensus_result,
    msg_discard,
    msg_genesis,
    msg_miner_info,
    msg_sim_end,
    msg_sim_start,
    msg_tx_pool,
)

log = logging.getLogger(__name__)

EXIT_DISCARDED = 3  # process status for a discarded simulation

REGISTRATION_TIMEOUT = 60.0
CONSENSUS_TIMEOUT = 30.0
SIM_END_GRACE = 0.25  # wall seconds past the scaled duration before SIM_END


class RegistrationTimeout(TimeoutError):
    """Not every expected miner registered in time."""


class ConsensusTimeout(TimeoutError):
    """A miner failed to answer during the consensus phase."""


@dataclass(frozen=True)
class SimulationConfig:
    num_miners: int
    duration: float
    interval: float
    seed: int
    time_scale: float = 1.0
    tx_pool_size: int = 100

    def __post_init__(self) -> None:
        if self.num_miners < 1:
            raise ValueError("need at least one miner")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.interval <= 0:
            raise ValueError("interval must be positive")
        if self.time_scale <= 0:
            raise ValueError("time_scale must be positive")
        if self.tx_pool_size < 0:
            raise ValueError("tx_pool_size cannot be negative")


class RegistrationLedger:
    """Miner roster in registration order; ids are 1, 2, 3, ..."""

    def __init__(self) -> None:
        self.entries: list[MinerRecord] = []

    def register(self, hashpower: float, ip: str, port: int) -> MinerRecord:
        if hashpower <= 0:
            raise ValueError("hashpower must be positive")
        if any(e.ip == ip and e.port == port for e in self.entries):
            raise ValueError(f"duplicate registration from {ip}:{port}")
        record = MinerRecord(
            miner_id=len(self.entries) + 1, hashpower=hashpower, ip=ip, port=port
        )
        self.entries.append(record)
        return record

    @property
    def total_hashpower(self) -> float:
        return sum(e.hashpower for e in self.entries)


def create_genesis() -> Block:
    """The common root block; same on every invocation."""
    return Block(
        id=derive_block_id(ADMIN_ID, 0, 0.0, 0),
        parent_id=None,
        depth=0,
        miner_id=ADMIN_ID,
        blocktime=0.0,
    )


def create_tx_pool(config: SimulationConfig, rng: random.Random) -> list[Transaction]:
    """Common transaction pool every miner draws from, unique ids."""
    pool: list[Transaction] = []
    seen: set[str] = set()
    while len(pool) < config.tx_pool_size:
        tx_id = f"{rng.getrandbits(128):032x}"
        if tx_id in seen:
            continue
        seen.add(tx_id)
        pool.append(
            Transaction(id=tx_id, size_bytes=rng.randint(250, 1000), fee=rng.random())
        )
    return pool


def subseed_for(seed: int, miner_id: int) -> int:
    """Per-miner mining seed handed out in SIM_START."""
    return seed ^ miner_id


class MinerConn(BufferedConn):
    """One registered miner's admin-side connection."""

    def __init__(self, sock: socket.socket, record: MinerRecord | None = None):
        super().__init__(sock)
        self.record = record

    @property
    def label(self) -> str:
        return f"miner {self.record.miner_id}" if self.record else "unregistered peer"


@dataclass
class FrameAccounting:
    """Counts of message types the admin received, split by phase."""

    mining: Counter = field(default_factory=Counter)
    consensus: Counter = field(default_factory=Counter)

    def as_dict(self) -> dict:
        return {
            "mining": dict(self.mining),
            "consensus": dict(self.consensus),
            "block_frames_during_mining": self.mining.get("BLOCK", 0),
            "last_block_frames": self.consensus.get("LAST_BLOCK", 0),
            "chain_frames": self.consensus.get("CHAIN", 0),
        }


class AdminServer:
    """Runs one complete simulation from registration to report."""

    def __init__(
        self,
        config: SimulationConfig,
        port: int,
        host: str = "127.0.0.1",
        registration_timeout: float = REGISTRATION_TIMEOUT,
        consensus_timeout: float = CONSENSUS_TIMEOUT,
    ):
        self.config = config
        self.host = host
        self.registration_timeout = registration_timeout
        self.consensus_timeout = consensus_timeout
        self.ledger = RegistrationLedger()
        self.accounting = FrameAccounting()
        self.genesis = create_genesis()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(config.num_miners)
        self.port = self._listener.getsockname()[1]
        self._conns: list[MinerConn] = []

    def run(self) -> dict:
        """Full lifecycle; returns the report record (see emit_report)."""
        try:
            self._run_registration()
            self._bootstrap()
            self._mining_wait()
            return self._run_consensus()
        finally:
            self.close()

    def close(self) -> None:
        for conn in self._conns:
            try:
                conn.sock.close()
            except OSError:
                pass
        try:
            self._listener.close()
        except OSError:
            pass

    # phase 1: registration

    def _run_registration(self) -> None:
        deadline = time.monotonic() + self.registration_timeout
        while len(self._conns) < self.config.num_miners:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise RegistrationTimeout(
                    f"{len(self._conns)}/{self.config.num_miners} miners registered"
                )
            self._listener.settimeout(remaining)
            try:
                sock, addr = self._listener.accept()
            except socket.timeout:
                continue
            self._admit(sock, addr, deadline)
        log.info(
            "registration complete: %d miners, total hashpower %.3f",
            len(self._conns),
            self.ledger.total_hashpower,
        )

    def _admit(self, sock: socket.socket, addr: tuple, deadline: float) -> None:
        conn = MinerConn(sock)
        try:
            msg = conn.next_message(max(0.1, deadline - time.monotonic()))
            if msg.type != "REGISTER":
                raise ProtocolError(f"expected REGISTER, got {msg.type}")
            record = self.ledger.register(
                hashpower=float(msg.payload["hashpower"]),
                ip=addr[0],
                port=int(msg.payload["port"]),
            )
        except (ProtocolError, TimeoutError, ConnectionClosed, KeyError, ValueError) as exc:
            log.warning("rejected registrant from %s: %s", addr, exc)
            sock.close()
            return
        conn.record = record
        # immediate ack: your id, roster to follow once everyone is in
        conn.send(msg_miner_info(record.miner_id, [], 0.0))
        self._conns.append(conn)

    # phase 2: roster, clock parameters, genesis, transaction pool

    def _bootstrap(self) -> None:
        roster = list(self.ledger.entries)
        total = self.ledger.total_hashpower
        pool = create_tx_pool(self.config, random.Random(self.config.seed))
        for conn in self._conns:
            mid = conn.record.miner_id
            conn.send(msg_miner_info(mid, roster, total))
            conn.send(
                msg_sim_start(
                    self.config.duration,
                    self.config.interval,
                    self.config.time_scale,
                    subseed_for(self.config.seed, mid),
                )
            )
            conn.send(msg_genesis(self.genesis))
            conn.send(msg_tx_pool(pool))

    # phase 3: sit out the simulation, watching for stray frames

    def _mining_wait(self) -> None:
        wall = self.config.duration / self.config.time_scale + SIM_END_GRACE
        end = time.monotonic() + wall
        socks = {conn.sock: conn for conn in self._conns}
        while True:
            remaining = end - time.monotonic()
            if remaining <= 0:
                break
            readable, _, _ = select.select(list(socks), [], [], min(remaining, 0.2))
            for sock in readable:
                conn = socks[sock]
                conn.pump(0.0)
                # no message is legitimate before SIM_END; count and drop
                while conn.inbox:
                    msg = conn.inbox.popleft()
                    self.accounting.mining[msg.type] += 1
                    log.warning(
                        "unexpected %s frame from %s during mining", msg.type, conn.label
                    )
        for conn in self._conns:
            conn.send(msg_sim_end())

    # phase 4: last-block consensus

    def _run_consensus(self) -> dict:
        entries: list[ConsensusEntry] = []
        for conn in self._conns:
            try:
                msg = conn.next_message(self.consensus_timeout)
            except TimeoutError as exc:
                raise ConsensusTimeout(f"no LAST_BLOCK from {conn.label}: {exc}") from exc
            self.accounting.consensus[msg.type] += 1
            if msg.type != "LAST_BLOCK":
                raise ProtocolError(
                    f"expected LAST_BLOCK from miner {conn.record.miner_id}, got {msg.type}"
                )
            entries.append(
                ConsensusEntry(
                    miner_id=int(msg.payload["miner_id"]),
                    last_block=block_from_payload(msg.payload["block"]),
                )
            )
        winner_id = select_consensus_winner(entries)
        winner = next(c for c in self._conns if c.record.miner_id == winner_id)
        winner.send(msg_chain_request())
        try:
            msg = winner.next_message(self.consensus_timeout)
        except TimeoutError as exc:
            return self._discard(f"winner {winner_id} never sent its chain: {exc}")
        self.accounting.consensus[msg.type] += 1
        if msg.type != "CHAIN":
            raise ProtocolError(f"expected CHAIN from winner, got {msg.type}")
        try:
            chain = chain_from_payload(msg.payload["blocks"])
            validate_chain(chain, allow_empty=True)
            if chain[0] != self.genesis:
                raise StructuralError("winning chain is not rooted at the genesis")
        except (ProtocolError, StructuralError, KeyError) as exc:
            return self._discard(f"winning chain failed validation: {exc}")
        if any(b.is_empty for b in chain):
            return self._discard("winning chain still contains placeholder blocks")
        result = msg_consensus_result(winner_id, chain)
        for conn in self._conns:
            conn.send(result)
        return emit_report(
            chain,
            self.ledger,
            config=self.config,
            winner_id=winner_id,
            discarded=False,
            accounting=self.accounting,
        )

    def _discard(self, reason: str) -> dict:
        log.warning("simulation discarded: %s", reason)
        discard = msg_discard(reason)
        for conn in self._conns:
            try:
                conn.send(discard)
            except OSError:
                pass
        return emit_report(
            None,
            self.ledger,
            config=self.config,
            winner_id=None,
            discarded=True,
            accounting=self.accounting,
            reason=reason,
        )


def emit_report(
    final_chain: list[Block] | None,
    ledger: RegistrationLedger,
    config: SimulationConfig,
    winner_id: int | None,
    discarded: bool,
    accounting: FrameAccounting | None = None,
    reason: str | None = None,
) -> dict:
    """Machine-readable run record; render_table turns it into text."""
    total = ledger.total_hashpower
    mined = Counter()
    total_blocks = 0
    if final_chain is not None:
        mined = Counter(b.miner_id for b in final_chain[1:])
        total_blocks = len(final_chain) - 1
        unknown = set(mined) - {e.miner_id for e in ledger.entries}
        if unknown:
            raise StructuralError(f"chain contains blocks from unknown miners {unknown}")
    miners = []
    for entry in ledger.entries:
        blocks = mined.get(entry.miner_id, 0)
        miners.append(
            {
                "miner_id": entry.miner_id,
                "ip": entry.ip,
                "port": entry.port,
                "hashpower": entry.hashpower,
                "hash_share_pct": 100.0 * entry.hashpower / total if total else 0.0,
                "blocks": blocks,
                "block_share_pct": 100.0 * blocks / total_blocks if total_blocks else 0.0,
            }
        )
    report = {
        "discarded": discarded,
        "reason": reason,
        "winner_id": winner_id,
        "seed": config.seed,
        "duration": config.duration,
        "interval": config.interval,
        "time_scale": config.time_scale,
        "num_miners": config.num_miners,
        "total_hashpower": total,
        "total_blocks": total_blocks,
        "miners": miners,
        "final_chain_ids": [b.id for b in final_chain] if final_chain else None,
    }
    if accounting is not None:
        report["frame_accounting"] = accounting.as_dict()
    return report


def render_table(report: dict) -> str:
    """Aligned text table of hash share vs block share per miner."""
    lines = [
        f"{'miner':>5}  {'hashpower':>9}  {'hash %':>7}  {'blocks':>6}  {'block %':>7}",
    ]
    for m in report["miners"]:
        lines.append(
            f"{m['miner_id']:>5}  {m['hashpower']:>9.2f}  {m['hash_share_pct']:>7.2f}"
            f"  {m['blocks']:>6}  {m['block_share_pct']:>7.2f}"
        )
    status = "DISCARDED" if report["discarded"] else f"winner: miner {report['winner_id']}"
    lines.append(
        f"total blocks mined: {report['total_blocks']} ({status}, seed {report['seed']})"
    )
    return "\n".join(lines)


def write_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
