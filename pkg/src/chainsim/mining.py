"""Pure mining-step logic shared by the live miner and the logical engine.

The step order is fixed: drain every due received block first, then
release at most one due own block, then make sure exactly one own block
is pending on the current tip. Draining receives first means a deeper
block that just arrived beats an own block that came due at the same
instant; the own block is then consumed as a stale drop.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .blocks import Block, derive_block_id
from .chain import (
    ActionKind,
    LocalChainState,
    UpdateAction,
    apply_created_block,
    apply_received_block,
)
from .timing import HashpowerProfile, compute_block_time, pop_due_created

TXS_PER_BLOCK = 10  # pool transactions claimed by each mined block


@dataclass
class MinerTally:
    """Per-miner action counters, reported at end of run."""

    created: int = 0
    appended_own: int = 0
    appended_received: int = 0
    uncled: int = 0
    switches: int = 0
    dropped_stale: int = 0

    def record(self, action: UpdateAction) -> None:
        kind = action.kind
        if kind is ActionKind.APPENDED_OWN:
            self.appended_own += 1
        elif kind is ActionKind.APPENDED_RECEIVED:
            self.appended_received += 1
        elif kind is ActionKind.UNCLED:
            self.uncled += 1
        elif kind is ActionKind.SWITCHED_CHAIN:
            self.switches += 1
        elif kind is ActionKind.DROPPED_STALE:
            self.dropped_stale += 1

    def as_dict(self) -> dict:
        return {
            "created": self.created,
            "appended_own": self.appended_own,
            "appended_received": self.appended_received,
            "uncled": self.uncled,
            "switches": self.switches,
            "dropped_stale": self.dropped_stale,
        }


@dataclass
class MiningContext:
    """Everything one miner needs to draw and release its own blocks."""

    miner_id: int
    profile: HashpowerProfile
    interval: float
    rng: random.Random
    tx_pool_ids: tuple[str, ...] = ()
    counter: int = 0
    tally: MinerTally = field(default_factory=MinerTally)


def next_tx_ids(pool_ids: tuple[str, ...], depth: int) -> tuple[str, ...]:
    """Pool slice claimed by the block at this depth; empty once exhausted."""
    start = (depth - 1) * TXS_PER_BLOCK
    return pool_ids[start : start + TXS_PER_BLOCK]


def draw_own_block(ctx: MiningContext, tip: Block, now: float) -> Block:
    """Draw the miner's next own block on top of the given tip."""
    blocktime = compute_block_time(ctx.profile, ctx.interval, now, ctx.rng)
    depth = tip.depth + 1
    ctx.counter += 1
    return Block(
        id=derive_block_id(ctx.miner_id, depth, blocktime, ctx.counter),
        parent_id=tip.id,
        depth=depth,
        miner_id=ctx.miner_id,
        blocktime=blocktime,
        tx_ids=next_tx_ids(ctx.tx_pool_ids, depth),
    )


def ensure_pending(ctx: MiningContext, state: LocalChainState, now: float) -> Block | None:
    """Keep exactly one own block pending, drawn on the current tip.

    A pending block whose parent is no longer the tip is silently
    replaced (the tip moved before it came due). Returns the new pending
    block if one was drawn.
    """
    if state.create_queue and state.create_queue[0].parent_id == state.tip.id:
        return None
    state.create_queue.clear()
    block = draw_own_block(ctx, state.tip, now)
    state.schedule_own(block)
    return block


def step(
    ctx: MiningContext,
    state: LocalChainState,
    now: float,
    duration: float,
) -> tuple[list[UpdateAction], Block | None]:
    """One mining step; returns the actions taken and a block to broadcast.

    Receives are drained in arrival order, then at most one due own block
    is released. Own blocks are only due while the simulation clock is
    inside the run (blocktime past the duration never fires).
    """
    actions: list[UpdateAction] = []
    while state.receive_queue and state.receive_queue[0].arrival <= now:
        item = state.receive_queue.popleft()
        action = apply_received_block(state, item.block, item.sender_id)
        ctx.tally.record(action)
        actions.append(action)
    broadcast: Block | None = None
    due = pop_due_created(state.create_queue, min(now, duration))
    if due is not None:
        ctx.tally.created += 1
        action = apply_created_block(state, due)
        ctx.tally.record(action)
        actions.append(action)
        if action.broadcast:
            broadcast = due
    if now < duration:
        ensure_pending(ctx, state, now)
    return actions, broadcast
