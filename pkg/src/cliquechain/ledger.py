"""Account ledger: block execution, rewards and slashing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .model import Address, Block, BlockId, Denunciation, Slot, Transaction
from .params import Params

log = logging.getLogger(__name__)


@dataclass
class Execution:
    """What one EXECUTE changed; ``supply_delta == minted - burned`` always."""

    block: BlockId
    slot: Slot
    minted: int
    burned: int
    supply_delta: int
    endorsements: int = 0
    skipped_txs: int = 0
    slashed: int = 0


@dataclass
class Ledger:
    params: Params
    balances: dict[Address, int] = field(default_factory=dict)
    deposits: dict[Address, int] = field(default_factory=dict)
    last_executed: dict[int, Slot] = field(default_factory=dict)
    executed_txs: set[bytes] = field(default_factory=set)
    punished: set[tuple] = field(default_factory=set)
    deposit_deltas: dict[int, dict[Address, int]] = field(default_factory=dict)
    history: list[Execution] = field(default_factory=list)

    @classmethod
    def genesis(cls, params: Params, balances: Mapping[Address, int], deposits: Mapping[Address, int]) -> "Ledger":
        return cls(params, dict(balances), dict(deposits))

    def supply(self) -> int:
        return sum(self.balances.values()) + sum(self.deposits.values())

    def read(self) -> dict[Address, tuple[int, int]]:
        """Snapshot of every account as (balance, deposit)."""
        keys = sorted(set(self.balances) | set(self.deposits))
        return {a: (self.balances.get(a, 0), self.deposits.get(a, 0)) for a in keys}

    def _credit(self, a: Address, amount: int) -> None:
        self.balances[a] = self.balances.get(a, 0) + amount

    def execute(self, b: Block, producer_of: Callable[[BlockId], Address | None]) -> Execution:
        """Apply ``b`` atomically. ``producer_of`` resolves endorsed blocks' producers."""
        p = self.params
        before = self.supply()
        minted = p.block_reward
        burned = 0
        slashed = 0
        skipped = 0
        self._credit(b.producer, p.block_reward)
        third = p.endorsement_reward // 3
        for cert in b.certificates:
            endorsed_producer = producer_of(cert.endorsed_block) or b.producer
            for e in cert.endorsements:
                self._credit(b.producer, third)
                self._credit(e.endorser, third)
                self._credit(endorsed_producer, third)
                minted += p.endorsement_reward
        for op in b.operations:
            if isinstance(op, Transaction):
                if op.id in self.executed_txs:
                    skipped += 1
                    continue
                cost = op.amount + op.fee
                if self.balances.get(op.sender, 0) < cost:
                    log.debug("skipping overdrawing tx %s", op.id.hex()[:12])
                    skipped += 1
                    continue
                self._credit(op.sender, -cost)
                self._credit(op.receiver, op.amount)
                self._credit(b.producer, op.fee)
                self.executed_txs.add(op.id)
            elif isinstance(op, Denunciation):
                if op.key in self.punished:
                    continue
                self.punished.add(op.key)
                penalty = min(p.penalty, self.deposits.get(op.offender, 0))
                if not penalty:
                    continue
                self.deposits[op.offender] -= penalty
                reward = penalty // 2
                self._credit(b.producer, reward)
                burned += penalty - reward
                slashed += penalty
                d = self.deposit_deltas.setdefault(b.slot.period, {})
                d[op.offender] = d.get(op.offender, 0) - penalty
        self.last_executed[b.slot.thread] = b.slot
        delta = self.supply() - before
        n_end = sum(len(c.endorsements) for c in b.certificates)
        ex = Execution(b.id, b.slot, minted, burned, delta, n_end, skipped, slashed)
        if delta != minted - burned:
            raise AssertionError(f"conservation violated executing {b.id.hex()}")
        self.history.append(ex)
        return ex

    def deposits_before(self, genesis: Mapping[Address, int], period: int) -> dict[Address, int]:
        """Genesis deposits plus every slashing executed in blocks of earlier periods."""
        out = dict(genesis)
        for per, deltas in self.deposit_deltas.items():
            if per < period:
                for a, d in deltas.items():
                    out[a] = out.get(a, 0) + d
        return out
