"""Small signed worlds for unit tests: keys, a stake table and a committee draw."""

from __future__ import annotations

from cliquechain.committee import StakeTable, committee
from cliquechain.graph import ChainHead
from cliquechain.model import (Block, Certificate, Endorsement, KeyRegistry, Parent, Slot, genesis_blocks,
                               keypair_from_seed)
from cliquechain.params import Params
from cliquechain.validity import Verifier


class Fixture:
    def __init__(self, threads=2, endorsers=96, threshold=64, stakers=8, delta_f=4, t0_ms=16000):
        self.params = Params(threads=threads, t0_ms=t0_ms, endorsers=endorsers, threshold=threshold,
                             delta_f=delta_f, seed=b"\x05" * 32)
        self.registry = KeyRegistry()
        self.keys = {}
        for i in range(stakers):
            kp = keypair_from_seed(f"fixture/{i}")
            self.registry.register(kp)
            self.keys[kp.address] = kp
        self.table = StakeTable({a: 1 for a in self.keys})
        self.genesis = genesis_blocks(threads)
        self.verifier = Verifier(self.registry)

    def draw(self, s: Slot):
        return committee(s, self.table, self.params.seed, self.params.endorsers)

    def head(self) -> ChainHead:
        p = self.params
        return ChainHead(p.t0_ms, p.threads, p.delta_f, p.clique_cap, self.genesis)

    def endorse(self, s: Slot, index: int, block_id: bytes) -> Endorsement:
        return Endorsement.create(self.keys[self.draw(s).endorsers[index]], s, index, block_id)

    def cert(self, s: Slot, block_id: bytes, count: int | None = None) -> Certificate:
        n = self.params.threshold if count is None else count
        return Certificate(s, block_id, tuple(self.endorse(s, i, block_id) for i in range(n)))

    def block(self, s: Slot, parents, certs=(), ops=(), signer=None) -> Block:
        kp = signer or self.keys[self.draw(s).producer]
        return Block.create(kp, s, [Parent(p.id, p.slot) for p in parents], certs, ops)

    def now(self, s: Slot) -> int:
        return s.period * self.params.t0_ms + s.thread * self.params.stagger_ms
