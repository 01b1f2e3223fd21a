"""Validator state machine: scheduler, endorser, block producer and message handler."""

from __future__ import annotations

import logging
from collections import Counter
from typing import TYPE_CHECKING, Iterable, NamedTuple

from .committee import Committee, StakeTable, committee
from .graph import ChainHead
from .ledger import Ledger
from .model import (DOUBLE_BLOCK, DOUBLE_ENDORSEMENT, Address, Block, BlockId, Certificate,
                    Denunciation, Endorsement, Keypair, KeyRegistry, Parent, Slot, Transaction,
                    shard_of, slot_time)
from .params import Params
from .validity import (ACCEPT, DEFER, Verifier, build_cert, is_valid_block, is_valid_certificate,
                       is_valid_endorsement)

if TYPE_CHECKING:
    from .netsim import Network

log = logging.getLogger(__name__)

BLOCK = "BLOCK"
ENDORSEMENT = "ENDORSEMENT"
CERTIFICATE = "CERTIFICATE"
REQUEST_BLOCK = "REQUEST-BLOCK"
TAGS = (BLOCK, ENDORSEMENT, CERTIFICATE, REQUEST_BLOCK)

MAX_OPS_PER_BLOCK = 64


class Message(NamedTuple):
    tag: str
    payload: object  # Block | tuple[Endorsement, ...] | Certificate | BlockId


class StakeView:
    """Per-epoch stake snapshots derived from a node's finalized ledger."""

    def __init__(self, params: Params, genesis_stakes: dict[Address, int]) -> None:
        self.params = params
        self.genesis_stakes = dict(genesis_stakes)
        self.genesis_table = StakeTable(genesis_stakes)
        self._tables: dict[int, StakeTable] = {}

    def settled(self, s: Slot) -> bool:
        """Whether the snapshot for ``s`` can no longer change."""
        epoch = s.period // self.params.epoch_periods
        return epoch < 2 or epoch in self._tables

    def table(self, s: Slot, ledger: Ledger, frontier: int) -> StakeTable:
        epoch = s.period // self.params.epoch_periods
        if epoch < 2:
            return self.genesis_table
        t = self._tables.get(epoch)
        if t is not None:
            return t
        boundary = (epoch - 1) * self.params.epoch_periods
        if not ledger.deposit_deltas or min(ledger.deposit_deltas) >= boundary:
            t = self.genesis_table
        else:
            stakes = ledger.deposits_before(self.genesis_stakes, boundary)
            t = StakeTable(stakes, boundary)
            if t.digest == self.genesis_table.digest:
                t = self.genesis_table
        if frontier >= boundary:
            self._tables[epoch] = t
        else:
            log.warning("stake snapshot for epoch %d requested before finality reached period %d", epoch, boundary)
        return t


class Node:
    """One validator process. Holds one or more staking keys.

    All handlers take the simulated time ``now`` (ms); the node's local clock
    is ``now + skew_ms``.
    """

    relay = True
    endorse_on_arrival = True

    def __init__(self, name: str, keys: Iterable[Keypair], params: Params, registry: KeyRegistry,
                 genesis: list[Block], stakes: dict[Address, int], balances: dict[Address, int],
                 skew_ms: int = 0) -> None:
        self.name = name
        self.keys: dict[Address, Keypair] = {k.address: k for k in keys}
        self.params = params
        self.registry = registry
        self.skew_ms = skew_ms
        self.net: Network | None = None
        self.verifier = Verifier(registry)
        self.verifier.known = self.endorsements_at
        self.head = ChainHead(params.t0_ms, params.threads, params.delta_f, params.clique_cap, genesis)
        self.genesis_ids = {g.id for g in genesis}
        self.ledger = Ledger.genesis(params, balances, stakes)
        self.stakes = StakeView(params, stakes)
        self.endorsements: dict[Slot, dict[int, Endorsement]] = {}
        self.tally: dict[Slot, Counter] = {}
        self._draws: dict[Slot, Committee] = {}
        self.certificates: dict[Slot, dict[BlockId, Certificate]] = {}
        self.block_denunciations: dict[Slot, Denunciation] = {}
        self.endorsement_denunciations: dict[tuple[Slot, int], Denunciation] = {}
        self.request_list: dict[BlockId, int] = {}
        self.endorsed: set[tuple[Slot, int]] = set()
        self.slot_taken: dict[Slot, BlockId] = {}
        self.deferred: dict[BlockId, Block] = {}
        self.waiting: dict[BlockId, set[BlockId]] = {}
        self.discarded: dict[BlockId, Block] = {}
        self.vouched: set[BlockId] = set()
        self.mempool: dict[int, dict[bytes, Transaction]] = {t: {} for t in range(params.threads)}
        self.last_final: dict[int, Block] = {g.slot.thread: g for g in genesis}
        self.final_order: list[BlockId] = []
        self.final_slots: dict[Slot, BlockId] = {g.slot: g.id for g in genesis}
        self.metrics: Counter = Counter()
        self.rebroadcast_by_slot: Counter = Counter()
        self.requested_by_slot: Counter = Counter()
        self.final_ids: set[BlockId] = set(self.genesis_ids)
        self.violations: Counter = Counter()
        self.now = 0
        self._pruned_to = 0

    # -- clocks and committees -------------------------------------------

    def local(self, now: int | None = None) -> int:
        return (self.now if now is None else now) + self.skew_ms

    def frontier(self) -> int:
        return min(b.slot.period for b in self.last_final.values())

    def draw(self, s: Slot) -> Committee:
        c = self._draws.get(s)
        if c is None:
            table = self.stakes.table(s, self.ledger, self.frontier())
            c = committee(s, table, self.params.seed, self.params.endorsers)
            if self.stakes.settled(s):
                self._draws[s] = c
        return c

    def endorsements_at(self, s: Slot) -> dict[int, Endorsement] | None:
        return self.endorsements.get(s)

    def own_indices(self, s: Slot) -> list[tuple[int, Keypair]]:
        return [(i, self.keys[a]) for i, a in enumerate(self.draw(s).endorsers) if a in self.keys]

    def certified(self, b: Block) -> bool:
        """Whether ``b`` can serve as a parent: it holds a certificate from its own slot."""
        if b.id in self.genesis_ids:
            return True
        return b.id in self.certificates.get(b.slot, ())

    # -- network ---------------------------------------------------------

    def broadcast(self, msg: Message, exclude: str | None = None) -> None:
        self.metrics[f"out.{msg.tag}"] += 1
        self.net.broadcast(self, msg, exclude)

    def send(self, target: str, msg: Message) -> None:
        self.metrics[f"out.{msg.tag}"] += 1
        self.net.send(self, target, msg)

    def deliver(self, msg: Message, sender: str, now: int) -> None:
        self.now = now
        self.metrics[f"in.{msg.tag}"] += 1
        if msg.tag == BLOCK:
            self.handle_block(msg.payload, sender)
        elif msg.tag == ENDORSEMENT:
            self.handle_endorsements(msg.payload, sender)
        elif msg.tag == CERTIFICATE:
            self.handle_certificate(msg.payload, sender)
        elif msg.tag == REQUEST_BLOCK:
            self.handle_request_block(msg.payload, sender)

    # -- scheduler -------------------------------------------------------

    def on_tick(self, kind: str, s: Slot, now: int) -> None:
        """``kind`` is "produce" at slot start or "endorse" half a period later."""
        self.now = now
        self.expire()
        if kind == "produce":
            if self.draw(s).producer in self.keys:
                self.produce(s)
        else:
            self.endorse_slot(s)

    def produce(self, s: Slot) -> None:
        b = self.produce_block(s)
        if b is not None:
            self.handle_block(b, self.name)

    def endorse_slot(self, s: Slot) -> None:
        self.endorse_now(s)

    # -- endorser instance -----------------------------------------------

    def endorsement_target(self, s: Slot) -> Block:
        """Last block of thread ``s.thread`` in the blockclique, at or before ``s``."""
        b = self.head.last_in_thread(self.head.blockclique(), s.thread, lambda x: x.slot <= s)
        return b if b is not None else self.last_final[s.thread]

    def endorse_now(self, s: Slot) -> None:
        """Endorse ``s`` with every drawn index not yet used."""
        mine = [(i, kp) for i, kp in self.own_indices(s) if (s, i) not in self.endorsed]
        if not mine:
            return
        target = self.endorsement_target(s).id
        self.endorsed.update((s, i) for i, _ in mine)
        self.handle_endorsements(tuple(Endorsement.create(kp, s, i, target) for i, kp in mine), self.name)

    # -- block producer instance -----------------------------------------

    def select_parents(self, s: Slot, forced: dict[int, Block] | None = None) -> list[Block] | None:
        """Latest certified blockclique block per thread, lowered where needed so
        that no grandparent is newer than the parent chosen in its thread."""
        forced = forced or {}
        bc = self.head.blockclique()
        cands: dict[int, list[Block]] = {}
        for t in range(self.params.threads):
            if t in forced:
                cands[t] = [forced[t]]
                continue
            xs = [self.head.blocks[bid] for bid in bc]
            xs = [b for b in xs if b.slot.thread == t and b.slot < s and self.certified(b)]
            xs.sort(key=lambda b: b.slot, reverse=True)
            xs.append(self.last_final[t])
            cands[t] = xs
        pos = {t: 0 for t in cands}
        for _ in range(64 * self.params.threads):
            chosen = {t: cands[t][pos[t]] for t in cands}
            bad = None
            for t, p in chosen.items():
                for t2, gp in enumerate(p.parents):
                    if chosen[t2].slot < gp.slot:
                        bad = t
                        break
                if bad is not None:
                    break
            if bad is None:
                return [chosen[t] for t in range(self.params.threads)]
            if pos[bad] + 1 >= len(cands[bad]):
                return None
            pos[bad] += 1
        return None

    def parent_certificates(self, parent: Block) -> list[Certificate]:
        out = []
        for s, certs in self.certificates.items():
            if s.thread == parent.slot.thread and s >= parent.slot:
                c = certs.get(parent.id)
                if c is not None:
                    out.append(c)
        out.sort(key=lambda c: c.slot)
        return out

    def pending_operations(self, thread: int) -> list:
        # operations carried by blocks still in the head; a discarded block
        # releases its operations for re-inclusion
        in_head: set = set()
        for b in self.head.blocks.values():
            for op in b.operations:
                in_head.add(op.id if isinstance(op, Transaction) else op.key)
        ops: list = []
        dens = list(self.block_denunciations.values()) + list(self.endorsement_denunciations.values())
        for d in sorted(dens, key=lambda d: (d.slot, d.kind, d.offender)):
            if len(ops) >= MAX_OPS_PER_BLOCK:
                break
            if d.key not in in_head and d.key not in self.ledger.punished:
                ops.append(d)
        pool = self.mempool[thread]
        for txid in [t for t in pool if t in self.ledger.executed_txs]:
            del pool[txid]
        for tx in pool.values():
            if len(ops) >= MAX_OPS_PER_BLOCK:
                break
            if tx.id not in in_head:
                ops.append(tx)
        return ops

    def produce_block(self, s: Slot, forced: dict[int, Block] | None = None,
                      kp: Keypair | None = None, extra_ops: tuple = ()) -> Block | None:
        kp = kp or self.keys[self.draw(s).producer]
        parents = self.select_parents(s, forced)
        if parents is None:
            self.metrics["produce.no_parents"] += 1
            return None
        tp = parents[s.thread]
        certs = self.parent_certificates(tp)
        if not certs or not (tp.slot.period == 0 or any(c.slot == tp.slot for c in certs)):
            self.metrics["produce.no_parent_certificate"] += 1
            log.info("%s: no certificate for thread parent at %s", self.name, s)
            return None
        ops = self.pending_operations(s.thread) + list(extra_ops)
        return Block.create(kp, s, [Parent(p.id, p.slot) for p in parents], certs, ops)

    # -- message handler -------------------------------------------------

    def handle_block(self, b: Block, sender: str) -> None:
        bid = b.id
        if bid in self.head or bid in self.deferred or bid in self.head.stale:
            return
        requested = bid in self.request_list
        taken = self.slot_taken.get(b.slot)
        if taken is None or taken == bid or requested or bid in self.discarded:
            self.process_block(b, sender, requested)
        elif b.slot not in self.block_denunciations:
            first = self._known_block(taken)
            d = self.draw(b.slot)
            if (first is not None and b.producer == first.producer == d.producer
                    and self.verifier.verify(b.signature, b.header.signature.payload_digest)
                    and b.header.signature.payload_digest == b.header.payload(b.slot, bid)):
                self.block_denunciations[b.slot] = Denunciation(DOUBLE_BLOCK, b.producer, first.header, b.header)
                self.metrics["blocks.denounced"] += 1
        else:
            self.metrics["blocks.ignored"] += 1

    def _known_block(self, bid: BlockId) -> Block | None:
        return self.head.get(bid) or self.deferred.get(bid) or self.discarded.get(bid)

    def process_block(self, b: Block, sender: str, requested: bool = False) -> None:
        v = is_valid_block(b, self.head, self.draw, self.verifier, self.params, self.local())
        if v.status == DEFER:
            self.slot_taken.setdefault(b.slot, b.id)
            self.deferred[b.id] = b
            self.metrics["blocks.deferred"] += 1
            for pid in v.missing:
                self.waiting.setdefault(pid, set()).add(b.id)
                if pid in self.discarded:
                    self.request_list[pid] = self.local() + self.params.request_expiry
                    self.process_block(self.discarded[pid], self.name, True)
                elif pid not in self.request_list:
                    self.request_list[pid] = self.local() + self.params.request_expiry
                    self.broadcast(Message(REQUEST_BLOCK, pid))
            return
        if v.status != ACCEPT:
            self.metrics[f"blocks.rejected.{v.reason}"] += 1
            return
        self.accept_block(b, sender, requested)

    def accept_block(self, b: Block, sender: str, requested: bool) -> None:
        bid = b.id
        self.slot_taken.setdefault(b.slot, bid)
        self.deferred.pop(bid, None)
        self.discarded.pop(bid, None)
        if self.request_list.pop(bid, None) is not None or requested:
            self.vouched.add(bid)
            self.metrics["blocks.requested_accepted"] += 1
        if self.relay or sender == self.name:
            self.rebroadcast_by_slot[b.slot] += 1
            if requested:
                self.requested_by_slot[b.slot] += 1
            self.broadcast(Message(BLOCK, b), exclude=sender)
        self.metrics["blocks.accepted"] += 1
        self.head.append(b)
        for c in b.certificates:
            self.certificates.setdefault(c.slot, {}).setdefault(c.endorsed_block, c)
        for c in self.certificates_for(bid):
            self.head.register_certificate(c)
        self.run_finalizer()
        if bid in self.head.blocks and self.endorse_on_arrival:
            self.expire()
            self.endorse_now(b.slot)
        for child in sorted(self.waiting.pop(bid, ())):
            blk = self.deferred.pop(child, None)
            if blk is not None and child not in self.head:
                self.process_block(blk, self.name, child in self.request_list or child in self.vouched)

    def certificates_for(self, bid: BlockId) -> list[Certificate]:
        return [certs[bid] for certs in self.certificates.values() if bid in certs]

    def handle_endorsements(self, batch: tuple[Endorsement, ...], sender: str) -> None:
        fresh: list[Endorsement] = []
        touched: set[tuple[Slot, BlockId]] = set()
        own = sender == self.name
        threshold = self.params.threshold
        last = None
        for e in batch:
            if e.slot != last:
                last = e.slot
                slot_map = self.endorsements.setdefault(last, {})
                tally = self.tally.get(last)
                if tally is None:
                    tally = self.tally[last] = Counter()
            cur = slot_map.get(e.index)
            if cur is None:
                if not own and not is_valid_endorsement(e, self.draw, self.verifier, self.params):
                    self.metrics["endorsements.invalid"] += 1
                    continue
                slot_map[e.index] = e
                fresh.append(e)
                tally[e.endorsed_block] += 1
                if tally[e.endorsed_block] >= threshold:
                    touched.add((last, e.endorsed_block))
            elif cur.id != e.id and (e.slot, e.index) not in self.endorsement_denunciations:
                if cur.endorser == e.endorser and is_valid_endorsement(e, self.draw, self.verifier, self.params):
                    self.endorsement_denunciations[(e.slot, e.index)] = Denunciation(
                        DOUBLE_ENDORSEMENT, e.endorser, cur, e)
                    self.metrics["endorsements.denounced"] += 1
                    fresh.append(e)
        for s, bid in sorted(touched):
            if bid not in self.certificates.get(s, ()):
                cert = build_cert(self.endorsements[s].values(), self.params.threshold, bid)
                if cert is not None:
                    self.store_certificate(cert, formed=True)
        if fresh and (self.relay or own):
            self.broadcast(Message(ENDORSEMENT, tuple(fresh)), exclude=sender)

    def store_certificate(self, cert: Certificate, formed: bool) -> None:
        self.certificates.setdefault(cert.slot, {})[cert.endorsed_block] = cert
        if formed:
            self.metrics["certificates.formed"] += 1
        bid = cert.endorsed_block
        if bid in self.head.blocks:
            self.head.register_certificate(cert)
            if self.relay:
                self.broadcast(Message(CERTIFICATE, cert))
        elif bid in self.discarded:
            self.process_block(self.discarded[bid], self.name, True)
        elif bid not in self.head and bid not in self.deferred:
            if bid not in self.request_list:
                self.request_list[bid] = self.local() + self.params.request_expiry
                self.broadcast(Message(REQUEST_BLOCK, bid))
        elif formed and self.relay:
            self.broadcast(Message(CERTIFICATE, cert))

    def handle_certificate(self, cert: Certificate, sender: str) -> None:
        if cert.endorsed_block in self.certificates.get(cert.slot, ()):
            return
        if not is_valid_certificate(cert, self.draw, self.verifier, self.params):
            self.metrics["certificates.invalid"] += 1
            return
        self.certificates.setdefault(cert.slot, {})[cert.endorsed_block] = cert
        if self.relay:
            self.broadcast(Message(CERTIFICATE, cert), exclude=sender)
        bid = cert.endorsed_block
        if bid in self.head.blocks:
            self.head.register_certificate(cert)
        elif bid in self.discarded:
            self.process_block(self.discarded[bid], self.name, True)
        elif bid not in self.head and bid not in self.deferred and bid not in self.request_list:
            self.request_list[bid] = self.local() + self.params.request_expiry
            self.broadcast(Message(REQUEST_BLOCK, bid))

    def handle_request_block(self, bid: BlockId, requester: str) -> None:
        b = self._known_block(bid)
        if b is not None and requester != self.name:
            self.send(requester, Message(BLOCK, b))

    # -- finality and ledger ---------------------------------------------

    def run_finalizer(self) -> None:
        res = self.head.finalize_step()
        for b in res.final:
            if any(p.id not in self.final_ids for p in b.parents):
                self.violations["final-not-ancestor-closed"] += 1
            self.final_ids.add(b.id)
            self.ledger.execute(b, self._producer_of)
            self.final_order.append(b.id)
            self.final_slots[b.slot] = b.id
            if b.slot > self.last_final[b.slot.thread].slot:
                self.last_final[b.slot.thread] = b
            for op in b.operations:
                if isinstance(op, Transaction):
                    self.mempool[b.slot.thread].pop(op.id, None)
        if res.stale & self.final_ids:
            self.violations["final-then-stale"] += 1
        self.metrics["blocks.final"] += len(res.final)
        self.metrics["blocks.stale"] += len(res.stale)

    def _producer_of(self, bid: BlockId) -> Address | None:
        b = self.head.get(bid)
        return b.producer if b is not None else None

    def submit(self, tx: Transaction) -> None:
        self.mempool[shard_of(tx.sender, self.params.threads)][tx.id] = tx

    # -- housekeeping ----------------------------------------------------

    def expire(self) -> None:
        """Drop expired requests and blocks that missed their certificate window."""
        now = self.local()
        for bid in [bid for bid, exp in self.request_list.items() if exp < now]:
            del self.request_list[bid]
        p = self.params
        window = p.cert_window
        doomed = [b for bid, b in self.head.blocks.items()
                  if bid not in self.genesis_ids and bid not in self.vouched
                  and slot_time(b.slot, p.t0_ms, p.threads) + window <= now and not self.certified(b)]
        for b in doomed:
            if b.id not in self.head.blocks:
                continue
            bodies = {o: self.head.blocks[o] for o in {b.id} | self.head.children_closure(b.id)}
            self.head.discard(b.id, mark_stale=False)
            self.discarded.update(bodies)
            self.metrics["blocks.discarded_uncertified"] += 1
        period = now // p.t0_ms
        keep = max(16, 4 * p.delta_f // max(1, p.threads) + 8)
        if period - keep > self._pruned_to + 8:
            self.prune_before(period - keep)

    def prune_before(self, period: int) -> None:
        self._pruned_to = period
        for d in (self.endorsements, self.tally, self._draws, self.block_denunciations):
            for s in [s for s in d if s.period < period]:
                del d[s]
        # certificates of blocks that may still serve as parents are kept
        live = set(self.head.blocks) | {b.id for b in self.last_final.values()}
        for s in [s for s in self.certificates if s.period < period]:
            kept = {bid: c for bid, c in self.certificates[s].items() if bid in live}
            if kept:
                self.certificates[s] = kept
            else:
                del self.certificates[s]
        for k in [k for k in self.endorsement_denunciations if k[0].period < period]:
            del self.endorsement_denunciations[k]
        self.endorsed = {k for k in self.endorsed if k[0].period >= period}
        for bid in [bid for bid, b in self.discarded.items() if b.slot.period < period]:
            del self.discarded[bid]
        for bid in [bid for bid, b in self.deferred.items() if b.slot.period < period]:
            del self.deferred[bid]
        for s in [s for s in self.slot_taken if s.period < period]:
            del self.slot_taken[s]
        self.verifier.forget_before(period)
        self.head.retain_final(period)
