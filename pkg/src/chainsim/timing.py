"""Simulation clocks, hashpower sampling, and blocktime arithmetic.

A miner's expected time to its next block scales inversely with its share
of the network hashpower: the delay is exponential with mean
interval * total / own, so the whole network produces one block per
interval on average regardless of how the hashpower is split.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass

from .blocks import Block

HASHPOWER_MAX = 30.0  # upper edge of the uniform hashpower draw


class InvalidHashpower(ValueError):
    """Hashpower values must satisfy 0 < own <= total."""


@dataclass(frozen=True)
class HashpowerProfile:
    own: float
    total: float

    def __post_init__(self) -> None:
        if not 0 < self.own <= self.total:
            raise InvalidHashpower(f"own={self.own}, total={self.total}")


class SimulationClock:
    """Scaled wall clock: simulation seconds elapsed since construction.

    time_scale is sim-seconds per wall-second, so a scale of 100 packs a
    1500 s simulation into 15 s of real time.
    """

    def __init__(self, time_scale: float = 1.0, start_instant: float | None = None):
        if time_scale <= 0:
            raise ValueError("time_scale must be positive")
        self.time_scale = time_scale
        self.start_instant = time.monotonic() if start_instant is None else start_instant

    def now(self) -> float:
        return (time.monotonic() - self.start_instant) * self.time_scale


class LogicalClock:
    """Clock that only moves when told to; for deterministic runs."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def advance_to(self, instant: float) -> None:
        if instant < self._now:
            raise ValueError(f"clock cannot go back ({instant} < {self._now})")
        self._now = instant


def sample_hashpower(rng: random.Random) -> float:
    """Uniform hashpower in (0, 30]; zero excluded so every miner mines."""
    return HASHPOWER_MAX * (1.0 - rng.random())


def compute_block_time(
    profile: HashpowerProfile, interval: float, now: float, rng: random.Random
) -> float:
    """Absolute blocktime of the miner's next own block.

    The delay is exponential with mean interval * total / own. Zero draws
    are rejected so a blocktime is always strictly in the future.
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    if profile.own <= 0:
        raise InvalidHashpower(f"own={profile.own}")
    mean = interval * profile.total / profile.own
    delta = 0.0
    while delta <= 0.0:
        delta = rng.expovariate(1.0 / mean)
    return now + delta


def pop_due_created(queue: list[Block], now: float) -> Block | None:
    """Remove and return the head of the create queue if its time has come."""
    if queue and queue[0].blocktime <= now:
        return queue.pop(0)
    return None


def simulation_expired(clock: SimulationClock | LogicalClock, duration: float) -> bool:
    if duration <= 0:
        raise ValueError("duration must be positive")
    return clock.now() >= duration
