"""Stake-weighted, deterministic selection of block producers and endorsers."""

from __future__ import annotations

import bisect
import struct
from functools import lru_cache
from typing import Mapping, NamedTuple

from .model import Address, Slot, digest

_SPACE = 1 << 256


class StakeTable:
    """Immutable Address -> stake snapshot, iterated in address order."""

    __slots__ = ("stakes", "total", "snapshot_period", "_addresses", "_cumulative", "digest")

    def __init__(self, stakes: Mapping[Address, int], snapshot_period: int = 0) -> None:
        items = sorted((a, int(s)) for a, s in stakes.items() if s > 0)
        if any(s < 0 for s in stakes.values()):
            raise ValueError("negative stake")
        self.stakes = dict(items)
        self.total = sum(s for _, s in items)
        self.snapshot_period = snapshot_period
        self._addresses = [a for a, _ in items]
        self._cumulative = []
        acc = 0
        for _, s in items:
            acc += s
            self._cumulative.append(acc)
        self.digest = digest(b"stake-table", *(a + struct.pack(">Q", s) for a, s in items))

    def __len__(self) -> int:
        return len(self._addresses)

    def __hash__(self) -> int:
        return hash(self.digest)

    def __eq__(self, other) -> bool:
        return isinstance(other, StakeTable) and self.digest == other.digest

    def share(self, address: Address) -> float:
        return self.stakes.get(address, 0) / self.total

    def pick(self, r: int) -> Address:
        """Address owning position ``r`` in [0, total) of the stake line."""
        return self._addresses[bisect.bisect_right(self._cumulative, r)]


class EmptyStakeTable(ValueError):
    pass


class Committee(NamedTuple):
    slot: Slot
    producer: Address
    endorsers: tuple[Address, ...]


def time_to_slot(time_ms: int, t0_ms: int, threads: int) -> Slot:
    """Latest slot whose start time is <= ``time_ms``."""
    if time_ms < 0:
        raise ValueError("time before genesis")
    period, rest = divmod(time_ms, t0_ms)
    return Slot(period, rest // (t0_ms // threads))


def _draw(seed: bytes, slot: Slot, index: int, tag: bytes, total: int) -> int:
    # rejection sampling keeps the draw unbiased for any total
    limit = _SPACE - _SPACE % total
    counter = 0
    base = seed + tag + struct.pack(">QHi", slot.period, slot.thread, index)
    while True:
        x = int.from_bytes(digest(base, struct.pack(">I", counter)), "big")
        if x < limit:
            return x % total
        counter += 1


def _draw_many(seed: bytes, slot: Slot, count: int, tag: bytes, total: int) -> list[int]:
    """``_draw`` for indices 0..count-1, sharing the per-slot prefix."""
    limit = _SPACE - _SPACE % total
    prefix = seed + tag + struct.pack(">QH", slot.period, slot.thread)
    first = struct.pack(">I", 0)
    out = []
    for i in range(count):
        x = int.from_bytes(digest(prefix, struct.pack(">i", i), first), "big")
        out.append(x % total if x < limit else _draw(seed, slot, i, tag, total))
    return out


def committee_block_producer(s: Slot, stakes: StakeTable, seed: bytes) -> Address:
    if not len(stakes):
        raise EmptyStakeTable("cannot draw from an empty stake table")
    return stakes.pick(_draw(seed, s, -1, b"producer", stakes.total))


def committee_endorsers(s: Slot, stakes: StakeTable, seed: bytes, count: int) -> list[tuple[Address, int]]:
    """``count`` independent stake-weighted draws with replacement, one per index."""
    if not len(stakes):
        raise EmptyStakeTable("cannot draw from an empty stake table")
    return [(stakes.pick(x), i) for i, x in enumerate(_draw_many(seed, s, count, b"endorser", stakes.total))]


@lru_cache(maxsize=1 << 12)
def committee(s: Slot, stakes: StakeTable, seed: bytes, count: int) -> Committee:
    """Memoised full draw for one slot; pure in its arguments."""
    return Committee(s, committee_block_producer(s, stakes, seed),
                     tuple(a for a, _ in committee_endorsers(s, stakes, seed, count)))
