"""Miner process: registration, peer mesh, mining loop, consensus.

One miner is two logical activities. A listener thread (plus one reader
thread per inbound peer connection) decodes BLOCK frames into a shared
queue; the main thread owns the chain state and runs the mining loop,
draining that queue and releasing its own due blocks. Outbound blocks go
through one sender thread per peer so a slow peer never stalls mining.
"""

from __future__ import annotations

import json
import logging
import queue
import random
import socket
import threading
import time
from dataclasses import dataclass

from .blocks import Block
from .chain import LocalChainState, finalize_state, validate_chain
from .mining import MiningContext, step
from .netio import BufferedConn, MessagePump, connect_with_retry
from .protocol import (
    MinerRecord,
    ProtocolError,
    WireMessage,
    block_from_payload,
    chain_from_payload,
    encode,
    miner_record_from_payload,
    msg_block,
    msg_chain,
    msg_last_block,
    msg_register,
)
from .timing import HashpowerProfile, SimulationClock, sample_hashpower

log = logging.getLogger(__name__)

CONNECT_TIMEOUT = 15.0
ROSTER_TIMEOUT = 120.0  # full roster arrives only once every miner registers
CONSENSUS_PHASE_TIMEOUT = 60.0
IDLE_SLEEP = 0.0005


@dataclass(frozen=True)
class PeerRoster:
    """Everyone else in the network, as assigned by the admin."""

    self_id: int
    peers: tuple[MinerRecord, ...]
    total_hashpower: float

    def __post_init__(self) -> None:
        if any(p.miner_id == self.self_id for p in self.peers):
            raise ValueError("roster peers must exclude the miner itself")


class PeerSender(threading.Thread):
    """Outbound frames to one peer, in order, over one lazy connection.

    A failed send is retried once on a fresh connection, then the frame
    is dropped: that peer simply misses the block.
    """

    def __init__(self, record: MinerRecord, delay_ms: int, rng: random.Random):
        super().__init__(name=f"send-to-{record.miner_id}", daemon=True)
        self.record = record
        self.delay_ms = delay_ms
        self.rng = rng
        self._queue: queue.Queue[bytes | None] = queue.Queue()
        self._sock: socket.socket | None = None

    def submit(self, frame: bytes) -> None:
        self._queue.put(frame)

    def stop(self) -> None:
        self._queue.put(None)

    def run(self) -> None:
        while True:
            frame = self._queue.get()
            if frame is None:
                break
            if self.delay_ms > 0:
                time.sleep(self.rng.uniform(0.0, self.delay_ms / 1000.0))
            self._deliver(frame)
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass

    def _deliver(self, frame: bytes) -> None:
        for attempt in (1, 2):
            try:
                if self._sock is None:
                    self._sock = socket.create_connection(
                        (self.record.ip, self.record.port), timeout=2.0
                    )
                self._sock.sendall(frame)
                return
            except OSError as exc:
                if self._sock is not None:
                    try:
                        self._sock.close()
                    except OSError:
                        pass
                    self._sock = None
                if attempt == 2:
                    log.warning(
                        "dropping frame for miner %d after retry: %s",
                        self.record.miner_id,
                        exc,
                    )


class PeerListener(threading.Thread):
    """Accepts peer connections and fans their BLOCK frames into a queue."""

    def __init__(self, sock: socket.socket, on_block):
        super().__init__(name="peer-listener", daemon=True)
        self._sock = sock
        self._on_block = on_block
        self._conns: list[socket.socket] = []
        self._stopped = False

    def run(self) -> None:
        while True:
            try:
                conn, _addr = self._sock.accept()
            except OSError:
                return  # listener closed
            self._conns.append(conn)
            MessagePump(conn, self._sink, name=f"peer-{conn.fileno()}").start()

    def _sink(self, msg: WireMessage) -> None:
        if msg.type != "BLOCK":
            log.warning("protocol violation: %s frame on a peer connection", msg.type)
            return
        self._on_block(block_from_payload(msg.payload["block"]))

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        try:
            self._sock.close()
        except OSError:
            pass
        for conn in self._conns:
            try:
                conn.close()
            except OSError:
                pass


def expect(conn: BufferedConn, want: str, timeout: float) -> WireMessage:
    msg = conn.next_message(timeout)
    if msg.type != want:
        raise ProtocolError(f"expected {want}, got {msg.type}")
    return msg


class MinerNode:
    """One complete miner lifecycle against a live admin server."""

    def __init__(
        self,
        admin_host: str,
        admin_port: int,
        listen_port: int,
        hashpower: float | None,
        seed: int,
        extra_delay_ms: int = 0,
        listen_host: str = "127.0.0.1",
    ):
        self.admin_host = admin_host
        self.admin_port = admin_port
        self.listen_host = listen_host
        self.listen_port = listen_port
        self.seed = seed
        self.extra_delay_ms = extra_delay_ms
        rng = random.Random(seed)
        self.hashpower = hashpower if hashpower is not None else sample_hashpower(rng)
        if self.hashpower <= 0:
            raise ValueError("hashpower must be positive")

    def run(self) -> dict:
        listen_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listen_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listen_sock.bind((self.listen_host, self.listen_port))
        listen_sock.listen(16)
        port = listen_sock.getsockname()[1]

        admin = BufferedConn(
            connect_with_retry(
                self.admin_host, self.admin_port, time.monotonic() + CONNECT_TIMEOUT
            )
        )
        listener = None
        senders: dict[int, PeerSender] = {}
        try:
            admin.send(msg_register(port, self.hashpower))
            ack = expect(admin, "MINER_INFO", CONNECT_TIMEOUT)
            my_id = int(ack.payload["miner_id"])

            info = expect(admin, "MINER_INFO", ROSTER_TIMEOUT)
            records = [miner_record_from_payload(o) for o in info.payload["miners"]]
            roster = PeerRoster(
                self_id=my_id,
                peers=tuple(r for r in records if r.miner_id != my_id),
                total_hashpower=float(info.payload["total_hashpower"]),
            )

            start = expect(admin, "SIM_START", CONNECT_TIMEOUT)
            duration = float(start.payload["duration"])
            interval = float(start.payload["interval"])
            subseed = int(start.payload["subseed"])
            clock = SimulationClock(time_scale=float(start.payload["time_scale"]))

            genesis_msg = expect(admin, "GENESIS", CONNECT_TIMEOUT)
            state = LocalChainState(block_from_payload(genesis_msg.payload["block"]))
            pool_msg = expect(admin, "TX_POOL", CONNECT_TIMEOUT)
            tx_ids = tuple(t["id"] for t in pool_msg.payload["transactions"])

            ctx = MiningContext(
                miner_id=my_id,
                profile=HashpowerProfile(own=self.hashpower, total=roster.total_hashpower),
                interval=interval,
                rng=random.Random(subseed),
                tx_pool_ids=tx_ids,
            )

            inbox: queue.SimpleQueue[Block] = queue.SimpleQueue()
            listener = PeerListener(listen_sock, on_block=inbox.put)
            listener.start()
            for peer in roster.peers:
                sender = PeerSender(
                    peer, self.extra_delay_ms, random.Random(subseed ^ peer.miner_id)
                )
                sender.start()
                senders[peer.miner_id] = sender

            self._mine(ctx, state, clock, duration, admin, inbox, senders)
            return self._consensus(ctx, state, admin, my_id, port)
        finally:
            if listener is not None:
                listener.stop()
            else:
                listen_sock.close()
            for sender in senders.values():
                sender.stop()
            admin.close()

    def _mine(
        self,
        ctx: MiningContext,
        state: LocalChainState,
        clock: SimulationClock,
        duration: float,
        admin: BufferedConn,
        inbox: queue.SimpleQueue,
        senders: dict[int, PeerSender],
    ) -> None:
        """Mining loop: runs until the admin calls time with SIM_END."""
        while True:
            msg = admin.try_next()
            if msg is not None:
                if msg.type == "SIM_END":
                    return
                log.warning("unexpected %s from admin during mining", msg.type)
            now = clock.now()
            moved = False
            while True:
                try:
                    block = inbox.get_nowait()
                except queue.Empty:
                    break
                state.enqueue_received(block, arrival=now, sender_id=block.miner_id)
                moved = True
            actions, broadcast = step(ctx, state, now, duration)
            if broadcast is not None:
                frame = encode(msg_block(broadcast))
                for sender in senders.values():
                    sender.submit(frame)
            if msg is None and not moved and not actions:
                time.sleep(IDLE_SLEEP)

    def _consensus(
        self,
        ctx: MiningContext,
        state: LocalChainState,
        admin: BufferedConn,
        my_id: int,
        port: int,
    ) -> dict:
        remaining = finalize_state(state)
        admin.send(msg_last_block(my_id, state.tip))
        discarded = False
        winner_id = None
        reason = None
        while True:
            msg = admin.next_message(CONSENSUS_PHASE_TIMEOUT)
            if msg.type == "CHAIN_REQUEST":
                admin.send(msg_chain(my_id, state.main_chain))
            elif msg.type == "CONSENSUS_RESULT":
                chain = chain_from_payload(msg.payload["blocks"])
                validate_chain(chain, allow_empty=False)
                winner_id = int(msg.payload["winner_id"])
                state.main_chain = chain  # the run's agreed output
                break
            elif msg.type == "DISCARD":
                discarded = True
                reason = msg.payload.get("reason")
                break
            else:
                log.warning("unexpected %s from admin during consensus", msg.type)
        return {
            "miner_id": my_id,
            "listen_port": port,
            "hashpower": self.hashpower,
            "discarded": discarded,
            "reason": reason,
            "winner_id": winner_id,
            "placeholders_remaining": remaining,
            "tally": ctx.tally.as_dict(),
            "final_chain_len": len(state.main_chain) - 1,
            "final_chain_ids": [b.id for b in state.main_chain],
        }


def write_stats(stats: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
