"""In-process simulation on a logical clock, for deterministic runs.

Same rules as the live network, but events (block births, block
arrivals) sit in one priority queue and time jumps from event to event.
Every random draw comes from a seeded generator, so a given
configuration replays bit-identically. Peer delivery delay is drawn
uniformly from a configurable range per (block, receiver) pair.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass

from .admin import (
    RegistrationLedger,
    SimulationConfig,
    create_genesis,
    create_tx_pool,
    emit_report,
    subseed_for,
)
from .blocks import Block
from .chain import (
    ConsensusEntry,
    LocalChainState,
    apply_created_block,
    apply_received_block,
    finalize_state,
    select_consensus_winner,
)
from .mining import MiningContext, MinerTally, draw_own_block
from .timing import HashpowerProfile, sample_hashpower

DEFAULT_DELAY_RANGE = (0.05, 0.3)  # sim-seconds, roughly LAN-to-WAN scale

CREATE, RECEIVE = 0, 1


def slot_seed(seed: int, slot: int) -> int:
    """Per-slot seed for things a miner draws before it has an id."""
    return seed + 7919 * (slot + 1)


@dataclass
class RunResult:
    report: dict
    discarded: bool
    winner_id: int | None
    final_chain: list[Block] | None
    states: list[LocalChainState]
    tallies: list[MinerTally]


def resolve_hashpowers(
    config: SimulationConfig, hashpowers: list[float] | None
) -> list[float]:
    """Explicit list, or one uniform draw per slot from its slot seed."""
    if hashpowers is not None:
        if len(hashpowers) != config.num_miners:
            raise ValueError("hashpower list length must equal num_miners")
        return list(hashpowers)
    return [
        sample_hashpower(random.Random(slot_seed(config.seed, i)))
        for i in range(config.num_miners)
    ]


def run_logical(
    config: SimulationConfig,
    hashpowers: list[float] | None = None,
    delay_range: tuple[float, float] = DEFAULT_DELAY_RANGE,
) -> RunResult:
    """One full simulation plus consensus, entirely in this process."""
    if not 0 <= delay_range[0] <= delay_range[1]:
        raise ValueError("delay range must satisfy 0 <= lo <= hi")
    powers = resolve_hashpowers(config, hashpowers)
    total = sum(powers)
    genesis = create_genesis()
    pool = create_tx_pool(config, random.Random(config.seed))
    tx_ids = tuple(t.id for t in pool)

    ledger = RegistrationLedger()
    for i, hp in enumerate(powers):
        ledger.register(hp, ip="logical", port=i)

    n = config.num_miners
    states = [LocalChainState(genesis) for _ in range(n)]
    ctxs = [
        MiningContext(
            miner_id=i + 1,
            profile=HashpowerProfile(own=powers[i], total=total),
            interval=config.interval,
            rng=random.Random(subseed_for(config.seed, i + 1)),
            tx_pool_ids=tx_ids,
        )
        for i in range(n)
    ]
    epochs = [0] * n
    net_rng = random.Random(f"net:{config.seed}")
    seq = itertools.count()
    heap: list[tuple] = []

    def schedule_create(i: int, now: float) -> None:
        block = draw_own_block(ctxs[i], states[i].tip, now)
        heapq.heappush(heap, (block.blocktime, next(seq), CREATE, i, block, epochs[i]))

    def broadcast(i: int, block: Block, now: float) -> None:
        for j in range(n):
            if j == i:
                continue
            delay = net_rng.uniform(*delay_range)
            heapq.heappush(heap, (now + delay, next(seq), RECEIVE, j, block, i + 1))

    for i in range(n):
        schedule_create(i, 0.0)

    while heap:
        t, _, kind, i, block, extra = heapq.heappop(heap)
        if t > config.duration:
            break
        if kind == CREATE:
            if extra != epochs[i]:
                continue  # cancelled by a tip change
            action = apply_created_block(states[i], block)
            ctxs[i].tally.created += 1
            ctxs[i].tally.record(action)
            if action.broadcast:
                broadcast(i, block, t)
            epochs[i] += 1
            schedule_create(i, t)
        else:
            before = states[i].tip.id
            action = apply_received_block(states[i], block, sender_id=extra)
            ctxs[i].tally.record(action)
            if states[i].tip.id != before:
                epochs[i] += 1
                schedule_create(i, t)

    remaining = [finalize_state(s) for s in states]
    entries = [
        ConsensusEntry(miner_id=i + 1, last_block=states[i].tip) for i in range(n)
    ]
    winner_id = select_consensus_winner(entries)
    discarded = remaining[winner_id - 1] > 0
    # the broadcast result IS final_chain; states keep each miner's own
    # pre-consensus view so callers can inspect divergence
    final_chain = None if discarded else list(states[winner_id - 1].main_chain)

    report = emit_report(
        final_chain,
        ledger,
        config=config,
        winner_id=None if discarded else winner_id,
        discarded=discarded,
        reason="winning chain still contains placeholder blocks" if discarded else None,
    )
    report["mode"] = "logical"
    report["miner_stats"] = [
        {
            "miner_id": i + 1,
            "hashpower": powers[i],
            "placeholders_remaining": remaining[i],
            "tally": ctxs[i].tally.as_dict(),
        }
        for i in range(n)
    ]
    return RunResult(
        report=report,
        discarded=discarded,
        winner_id=None if discarded else winner_id,
        final_chain=final_chain,
        states=states,
        tallies=[c.tally for c in ctxs],
    )
