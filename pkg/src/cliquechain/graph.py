"""Block DAG, compatibility graph, maximal cliques, blockclique and finalizer.

Only the chain head (non-finalized blocks) lives in the graphs; finalized
blocks move to an id index so that parent references to them still resolve.

Certificate vertices are true twins of their anchor block (the containing
block for included certificates, the endorsed block for speculative ones):
their closed neighbourhood equals the anchor's. Every maximal clique of the
compatibility graph is therefore a maximal clique of the block-only graph
plus all certificates anchored inside it, which is how cliques are computed.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping

from .model import Block, BlockId, Certificate, Slot, slot_time

log = logging.getLogger(__name__)

CertKey = tuple  # (Slot, BlockId)


class CliqueCapExceeded(RuntimeError):
    """More maximal cliques than the configured resource cap."""


def maximal_cliques(adj: Mapping[Hashable, Iterable[Hashable]], cap: int | None = None) -> list[frozenset]:
    """All maximal cliques of an undirected graph (Bron-Kerbosch, Tomita pivot).

    ``adj`` must be symmetric and loop-free. Output is sorted for determinism.
    """
    nbrs = {v: set(ns) for v, ns in adj.items()}
    out: list[frozenset] = []
    if not nbrs:
        return out

    def expand(r: list, p: set, x: set) -> None:
        if not p and not x:
            out.append(frozenset(r))
            if cap is not None and len(out) > cap:
                raise CliqueCapExceeded(f"more than {cap} maximal cliques")
            return
        pivot = max(p | x, key=lambda u: len(p & nbrs[u]))
        for v in sorted(p - nbrs[pivot]):
            expand(r + [v], p & nbrs[v], x & nbrs[v])
            p.discard(v)
            x.add(v)

    try:
        expand([], set(nbrs), set())
    finally:
        del expand  # a recursive closure is a reference cycle; free it now
    out.sort(key=lambda c: sorted(c))
    return out


def best_clique(cliques: list[frozenset], fitness: Callable[[frozenset], int],
                tiebreak: Callable[[frozenset], int]) -> frozenset:
    """Clique of maximal fitness; ties go to the smaller ``tiebreak`` value."""
    return min(cliques, key=lambda c: (-fitness(c), tiebreak(c), sorted(c)))


@dataclass
class CertVertex:
    cert: Certificate
    anchor: BlockId
    included_in: BlockId | None

    @property
    def speculative(self) -> bool:
        return self.included_in is None


@dataclass
class CliqueReport:
    cliques: list[frozenset]  # block-level
    fitness: list[int]
    blockclique: frozenset
    blockclique_fitness: int
    tiebreak: list[int] = field(default_factory=list)


@dataclass
class FinalizeResult:
    final: list[Block]
    stale: set[BlockId]


class ChainHead:
    """The block graph G and compatibility graph G_C of one node."""

    def __init__(self, t0_ms: int, threads: int, delta_f: int, clique_cap: int = 1024,
                 genesis: Iterable[Block] = ()) -> None:
        self.t0 = t0_ms
        self.threads = threads
        self.delta_f = delta_f
        self.clique_cap = clique_cap
        self.blocks: dict[BlockId, Block] = {}  # insertion order is topological
        self.ancestors: dict[BlockId, set[BlockId]] = {}
        self.children: dict[BlockId, set[BlockId]] = {}
        self.adj: dict[BlockId, set[BlockId]] = {}
        self.certs: dict[CertKey, CertVertex] = {}
        self.anchored: dict[BlockId, set[CertKey]] = {}
        self.final: dict[BlockId, Block] = {}  # recent finalized blocks, see retain_final
        self.final_meta: dict[BlockId, tuple[Slot, tuple[Slot, ...]]] = {}
        self.stale: set[BlockId] = set()
        self.final_slots: list[list[Slot]] = [[] for _ in range(threads)]  # per thread, ascending
        self.by_slot: dict[Slot, set[BlockId]] = {}
        self._report: CliqueReport | None = None
        self._cliques: list[frozenset] | None = None
        for g in genesis:
            self.append(g)

    # -- queries ---------------------------------------------------------

    def __contains__(self, bid: BlockId) -> bool:
        return bid in self.blocks or bid in self.final_meta

    def get(self, bid: BlockId) -> Block | None:
        return self.blocks.get(bid) or self.final.get(bid)

    def occupied(self, s: Slot) -> bool:
        return bool(self.by_slot.get(s))

    def time_of(self, b: Block) -> int:
        return slot_time(b.slot, self.t0, self.threads)

    def compatible(self, a: BlockId, b: BlockId) -> bool:
        """Edge test in G_C; finalized blocks are compatible with every head vertex."""
        if a == b or a in self.final_meta or b in self.final_meta:
            return True
        return b in self.adj.get(a, ())

    def conflicts_with_final(self, b: Block) -> bool:
        """Whether ``b`` would be incompatible with some finalized block.

        A final block of thread t newer than ``b``'s parent in t is not an
        ancestor of ``b``; only the parallel rule can still relate the two.
        """
        tb = self.time_of(b)
        for t, p in enumerate(b.parents):
            fs = self.final_slots[t]
            i = bisect.bisect_right(fs, p.slot)
            if i == len(fs):
                continue
            if t == b.slot.thread:
                return True
            for y in (fs[i], fs[-1]):
                if abs(tb - slot_time(y, self.t0, self.threads)) >= self.t0:
                    return True
        return False

    def directed_path(self, src: BlockId, dst: BlockId) -> bool:
        return dst in self.ancestors.get(src, ())

    # -- mutation --------------------------------------------------------

    def append(self, b: Block) -> None:
        """appendToG followed by appendToG_C; ``b``'s parents must be known."""
        if b.id in self:
            return
        missing = [p.id for p in b.parents if p.id not in self]
        if missing:
            raise ValueError(f"append out of topological order: {len(missing)} missing parents")
        self.append_to_g(b)
        self.append_to_gc(b)

    def append_to_g(self, b: Block) -> None:
        anc: set[BlockId] = set()
        for p in b.parents:
            if p.id in self.blocks:
                anc.add(p.id)
                anc |= self.ancestors[p.id]
                self.children[p.id].add(b.id)
        anc.intersection_update(self.blocks)
        self.blocks[b.id] = b
        self.ancestors[b.id] = anc
        self.children[b.id] = set()
        self.by_slot.setdefault(b.slot, set()).add(b.id)

    def append_to_gc(self, b: Block) -> None:
        bid = b.id
        self.adj[bid] = set()
        head_parents = [p.id for p in b.parents if p.id in self.blocks]
        tb = self.time_of(b)
        tp = b.thread_parent()
        mine = self.adj[bid]
        for oid, other in self.blocks.items():
            if oid == bid:
                continue
            if not all(p == oid or oid in self.adj[p] for p in head_parents):
                continue
            if b.is_genesis and other.is_genesis:
                ok = True
            elif oid in self.ancestors[bid]:
                ok = True
            elif not all(p.id in mine or p.id not in self.blocks for p in other.parents):
                # incompatibility is inherited from either side; insertion
                # order is topological, so other's parents are already settled
                ok = False
            else:
                ok = (other.slot.thread != b.slot.thread
                      and abs(tb - self.time_of(other)) < self.t0
                      and tp != other.thread_parent())
            if ok:
                self.adj[bid].add(oid)
                self.adj[oid].add(bid)
        self._cliques = None
        self._report = None
        for c in b.certificates:
            self.register_certificate(c, included_in=bid)

    def register_certificate(self, cert: Certificate, included_in: BlockId | None = None) -> bool:
        """Add a certificate vertex; returns False if its anchor is not in the head."""
        key = cert.key
        cv = self.certs.get(key)
        if cv is not None:
            if included_in is not None and cv.speculative and included_in in self.blocks:
                self._unanchor(key, cv.anchor)
                cv.anchor, cv.included_in = included_in, included_in
                self.anchored.setdefault(included_in, set()).add(key)
                self._report = None
            return True
        anchor = included_in if included_in is not None else cert.endorsed_block
        if anchor not in self.blocks:
            return False
        self.certs[key] = CertVertex(cert, anchor, included_in)
        self.anchored.setdefault(anchor, set()).add(key)
        self._report = None
        return True

    def _unanchor(self, key: CertKey, anchor: BlockId) -> None:
        keys = self.anchored.get(anchor)
        if keys is not None:
            keys.discard(key)
            if not keys:
                del self.anchored[anchor]

    def remove(self, bid: BlockId) -> None:
        b = self.blocks.pop(bid)
        for o in self.adj.pop(bid):
            self.adj[o].discard(bid)
        del self.ancestors[bid]
        del self.children[bid]
        for p in b.parents:
            if p.id in self.children:
                self.children[p.id].discard(bid)
        for key in self.anchored.pop(bid, ()):
            del self.certs[key]
        self._cliques = None
        self._report = None

    # -- cliques ---------------------------------------------------------

    def block_cliques(self) -> list[frozenset]:
        if self._cliques is None:
            self._cliques = maximal_cliques(self.adj, self.clique_cap)
        return self._cliques

    def clique_fitness(self, clique: frozenset) -> int:
        return len(clique) + sum(len(self.anchored.get(b, ())) for b in clique)

    def hash_sum(self, clique: frozenset) -> int:
        return sum(int.from_bytes(b, "big") for b in clique)

    def report(self) -> CliqueReport:
        if self._report is None:
            cl = self.block_cliques()
            if not cl:
                self._report = CliqueReport([], [], frozenset(), 0)
            else:
                fit = [self.clique_fitness(c) for c in cl]
                bc = best_clique(cl, self.clique_fitness, self.hash_sum)
                self._report = CliqueReport(cl, fit, bc, self.clique_fitness(bc),
                                            [self.hash_sum(c) for c in cl])
        return self._report

    def max_cliques(self) -> list[frozenset]:
        """Maximal cliques of G_C, certificate vertices included as (slot, block) keys."""
        return [self.expand(c) for c in self.block_cliques()]

    def expand(self, clique: frozenset) -> frozenset:
        return clique | {k for b in clique for k in self.anchored.get(b, ())}

    def blockclique(self) -> frozenset:
        return self.report().blockclique

    def descendant_fitness(self, bid: BlockId, clique: frozenset) -> int:
        """Clique vertices descending from ``bid``: blocks below it, plus certificates
        whose endorsed block is ``bid`` or one of its descendants."""
        n = 0
        for o in clique:
            if o != bid and bid in self.ancestors[o]:
                n += 1
        for o in clique:
            for key in self.anchored.get(o, ()):
                e = key[1]
                if e == bid or (e in self.ancestors and bid in self.ancestors[e]):
                    n += 1
        return n

    def descendant_counts(self, clique: frozenset) -> dict[BlockId, int]:
        """``descendant_fitness`` for every block of ``clique`` in one pass."""
        counts = dict.fromkeys(clique, 0)
        for o in clique:
            for a in self.ancestors[o]:
                if a in counts:
                    counts[a] += 1
            for key in self.anchored.get(o, ()):
                e = key[1]
                if e in counts:
                    counts[e] += 1
                for a in self.ancestors.get(e, ()):
                    if a in counts:
                        counts[a] += 1
        return counts

    def last_in_thread(self, clique: Iterable[BlockId], thread: int,
                       accept: Callable[[Block], bool] = lambda b: True) -> Block | None:
        best = None
        for bid in clique:
            b = self.blocks[bid]
            if b.slot.thread == thread and accept(b) and (best is None or b.slot > best.slot):
                best = b
        return best

    # -- finalizer -------------------------------------------------------

    def finalize_step(self) -> FinalizeResult:
        """Prune stale blocks and move final ones to the finalized index."""
        rep = self.report()
        if not rep.cliques:
            return FinalizeResult([], set())
        limit = rep.blockclique_fitness - self.delta_f
        member: dict[BlockId, list[int]] = {bid: [] for bid in self.blocks}
        for i, c in enumerate(rep.cliques):
            for bid in c:
                member[bid].append(i)
        n = len(rep.cliques)
        stale: set[BlockId] = set()
        eligible: set[BlockId] = set()
        in_all = [bid for bid, idx in member.items() if len(idx) == n]
        desc = [self.descendant_counts(c) for c in rep.cliques] if in_all else []
        for bid, idx in member.items():
            if max(rep.fitness[i] for i in idx) < limit:
                stale.add(bid)
            elif len(idx) == n and any(desc[i].get(bid, 0) > self.delta_f for i in idx):
                eligible.add(bid)
        final_ids = {b for b in eligible if all(a in eligible or a not in self.blocks for a in self.ancestors[b])}
        for bid in list(stale):
            stale |= self.children_closure(bid)
        stale -= final_ids
        final = [b for bid, b in self.blocks.items() if bid in final_ids]
        final.sort(key=lambda b: b.slot)
        for b in final:
            self.remove(b.id)
            self.final[b.id] = b
            self.final_meta[b.id] = (b.slot, tuple(p.slot for p in b.parents))
            self.final_slots[b.slot.thread].append(b.slot)
        for bid in stale:
            if bid in self.blocks:
                self.discard(bid)
        return FinalizeResult(final, stale)

    def retain_final(self, min_period: int) -> None:
        """Drop finalized block bodies older than ``min_period``; their ids stay known."""
        for bid in [bid for bid, b in self.final.items() if b.slot.period < min_period]:
            del self.final[bid]

    def slot_of(self, bid: BlockId) -> Slot | None:
        b = self.blocks.get(bid)
        if b is not None:
            return b.slot
        meta = self.final_meta.get(bid)
        return meta[0] if meta else None

    def children_closure(self, bid: BlockId) -> set[BlockId]:
        out: set[BlockId] = set()
        todo = [bid]
        while todo:
            for c in self.children.get(todo.pop(), ()):
                if c not in out:
                    out.add(c)
                    todo.append(c)
        return out

    def discard(self, bid: BlockId, mark_stale: bool = True) -> set[BlockId]:
        """Remove ``bid`` and its head descendants; returns the removed ids."""
        gone = {bid} | self.children_closure(bid)
        for o in [o for o in self.blocks if o in gone]:
            b = self.blocks[o]
            self.remove(o)
            s = self.by_slot.get(b.slot)
            if s is not None:
                s.discard(o)
                if not s:
                    del self.by_slot[b.slot]
            if mark_stale:
                self.stale.add(o)
        return gone

    # -- export ----------------------------------------------------------

    def to_dot(self) -> str:
        """Vertex list + edge lists in Graphviz DOT: solid = G (child->parent), dashed = G_C."""
        lines = ["digraph head {"]
        for bid, b in self.blocks.items():
            lines.append(f'  "{bid.hex()[:12]}" [label="{b.slot.period},{b.slot.thread}"];')
        for key, cv in sorted(self.certs.items()):
            lines.append(f'  "c{key[0].period}.{key[0].thread}.{key[1].hex()[:8]}" [shape=box];')
        for bid, b in self.blocks.items():
            for p in b.parents:
                if p.id in self.blocks:
                    lines.append(f'  "{bid.hex()[:12]}" -> "{p.id.hex()[:12]}";')
        seen = set()
        for a, ns in self.adj.items():
            for o in ns:
                e = tuple(sorted((a, o)))
                if e not in seen:
                    seen.add(e)
                    lines.append(f'  "{e[0].hex()[:12]}" -> "{e[1].hex()[:12]}" [dir=none, style=dashed];')
        lines.append("}")
        return "\n".join(lines) + "\n"
