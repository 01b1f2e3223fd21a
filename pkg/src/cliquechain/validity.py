"""Validity predicates for endorsements, certificates, denunciations and blocks."""

from __future__ import annotations

from collections import Counter
from typing import Callable, Iterable, Mapping, NamedTuple

from .committee import Committee
from .graph import ChainHead
from .model import (DOUBLE_BLOCK, DOUBLE_ENDORSEMENT, Block, BlockHeader, BlockId, Certificate,
                    Denunciation, Endorsement, KeyRegistry, ModeledSignature, Slot, Transaction,
                    shard_of, slot_time)
from .params import Params

Draw = Callable[[Slot], Committee]

# reason codes
BAD_SIGNATURE = "bad-signature"
WRONG_DRAW = "wrong-draw"
BAD_STRUCTURE = "bad-structure"
BELOW_THRESHOLD = "below-threshold"
MIXED_BLOCK = "mixed-block"
MIXED_SLOT = "mixed-slot"
DUPLICATE_INDEX = "duplicate-index"
INVALID_ENDORSEMENT = "invalid-endorsement"
NO_CERTIFICATE = "no-certificate"
INVALID_CERTIFICATE = "invalid-certificate"
WRONG_PARENT_CERTIFICATE = "certificate-not-for-thread-parent"
NO_SAME_PERIOD_CERTIFICATE = "no-same-period-certificate"
PARENT_NOT_OLDER = "parent-not-older"
INCOMPATIBLE_PARENTS = "incompatible-parents"
GRANDPARENT_NEWER = "grandparent-newer-than-parent"
TOO_EARLY = "too-early"
OVERSIZE = "oversize"
WRONG_SHARD = "wrong-shard"
BAD_OPERATION = "bad-operation"
STALE_PARENT = "stale-parent"
CONFLICTS_WITH_FINAL = "conflicts-with-final"

ACCEPT, REJECT, DEFER = "accept", "reject", "defer"


class Verdict(NamedTuple):
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


VALID = Verdict(True)


class BlockVerdict(NamedTuple):
    status: str
    reason: str | None = None
    missing: tuple[BlockId, ...] = ()

    def __bool__(self) -> bool:
        return self.status == ACCEPT


class Verifier:
    """Signature checker that counts real verifications (the CPU proxy).

    Endorsements already verified by this node are remembered per slot, so
    re-checking the same bytes inside a certificate costs nothing.
    """

    def __init__(self, registry: KeyRegistry) -> None:
        self.registry = registry
        self.count = 0
        self._seen: dict[Slot, set[ModeledSignature]] = {}
        self._certs: dict[Slot, list] = {}
        # slot -> index -> endorsement already accepted by the owner
        self.known: Callable[[Slot], Mapping[int, Endorsement] | None] = lambda s: None

    def verify(self, sig: ModeledSignature, payload: bytes) -> bool:
        self.count += 1
        return self.registry.verify(sig, payload)

    def verify_endorsement(self, e: Endorsement) -> bool:
        sig = e.signature
        # the memo only vouches for the exact (signer, payload, tag) triple
        if sig.signer != e.endorser or sig.payload_digest != e.id:
            return False
        seen = self._seen.get(e.slot)
        if seen is not None and sig in seen:
            return True
        if not self.verify(sig, e.id):
            return False
        self._seen.setdefault(e.slot, set()).add(sig)
        return True

    def known_certificate(self, c) -> bool:
        # identity, not equality: the same object already passed every check
        return any(x is c for x in self._certs.get(c.slot, ()))

    def remember_certificate(self, c) -> None:
        self._certs.setdefault(c.slot, []).append(c)

    def forget_before(self, period: int) -> None:
        for d in (self._seen, self._certs):
            for s in [s for s in d if s.period < period]:
                del d[s]


# -- endorsements and certificates ------------------------------------------


def is_valid_endorsement(e: Endorsement, draw: Draw, verifier: Verifier, params: Params) -> Verdict:
    if not (0 <= e.index < params.endorsers and 0 <= e.slot.thread < params.threads):
        return Verdict(False, BAD_STRUCTURE)
    # committee check first: it is free, signature checks are not
    if draw(e.slot).endorsers[e.index] != e.endorser:
        return Verdict(False, WRONG_DRAW)
    if not verifier.verify_endorsement(e):
        return Verdict(False, BAD_SIGNATURE)
    return VALID


def is_valid_certificate(c: Certificate, draw: Draw, verifier: Verifier, params: Params) -> Verdict:
    if verifier.known_certificate(c):
        return VALID
    if len(c.endorsements) < params.threshold:
        return Verdict(False, BELOW_THRESHOLD)
    visited: set[int] = set()
    for e in c.endorsements:
        if e.slot != c.slot:
            return Verdict(False, MIXED_SLOT)
        if e.endorsed_block != c.endorsed_block:
            return Verdict(False, MIXED_BLOCK)
        if e.index in visited:
            return Verdict(False, DUPLICATE_INDEX)
        visited.add(e.index)
    if not (0 <= c.slot.thread < params.threads and all(0 <= i < params.endorsers for i in visited)):
        return Verdict(False, INVALID_ENDORSEMENT)
    drawn = draw(c.slot).endorsers
    known = verifier.known(c.slot) or {}
    for e in c.endorsements:
        if known.get(e.index) is e:
            continue
        if drawn[e.index] != e.endorser or not verifier.verify_endorsement(e):
            return Verdict(False, INVALID_ENDORSEMENT)
    verifier.remember_certificate(c)
    return VALID


def build_cert(pool: Iterable[Endorsement], threshold: int, block: BlockId | None = None) -> Certificate | None:
    """Certificate over the largest same-block group of ``pool`` (or the group for ``block``)."""
    pool = list(pool)
    if not pool:
        return None
    if block is None:
        # distinct indices, not raw counts: a repeated index adds nothing
        counts = Counter(b for b, _ in {(e.endorsed_block, e.index) for e in pool})
        block = min(counts, key=lambda h: (-counts[h], h))
    group: dict[int, Endorsement] = {}
    for e in pool:
        if e.endorsed_block == block:
            group.setdefault(e.index, e)
    if len(group) < threshold:
        return None
    es = tuple(group[i] for i in sorted(group))
    return Certificate(es[0].slot, block, es)


# -- denunciations ------------------------------------------------------------


def is_valid_denunciation(d: Denunciation, draw: Draw, verifier: Verifier, params: Params) -> Verdict:
    a, b = d.evidence_a, d.evidence_b
    if d.kind == DOUBLE_BLOCK:
        if not (isinstance(a, BlockHeader) and isinstance(b, BlockHeader)):
            return Verdict(False, BAD_STRUCTURE)
        if a.slot != b.slot or a.block_id == b.block_id:
            return Verdict(False, BAD_STRUCTURE)
        if a.producer != d.offender or b.producer != d.offender or draw(a.slot).producer != d.offender:
            return Verdict(False, WRONG_DRAW)
        for h in (a, b):
            if h.signature.signer != d.offender or not verifier.verify(h.signature, BlockHeader.payload(h.slot, h.block_id)):
                return Verdict(False, BAD_SIGNATURE)
        return VALID
    if d.kind == DOUBLE_ENDORSEMENT:
        if not (isinstance(a, Endorsement) and isinstance(b, Endorsement)):
            return Verdict(False, BAD_STRUCTURE)
        if a.slot != b.slot or a.index != b.index or a.id == b.id:
            return Verdict(False, BAD_STRUCTURE)
        if a.endorser != d.offender or b.endorser != d.offender:
            return Verdict(False, WRONG_DRAW)
        for e in (a, b):
            v = is_valid_endorsement(e, draw, verifier, params)
            if not v:
                return v
        return VALID
    return Verdict(False, BAD_STRUCTURE)


def is_valid_transaction(tx: Transaction, thread: int, verifier: Verifier, params: Params) -> Verdict:
    if shard_of(tx.sender, params.threads) != thread:
        return Verdict(False, WRONG_SHARD)
    if tx.signature.signer != tx.sender or not verifier.verify(tx.signature, tx.id):
        return Verdict(False, BAD_SIGNATURE)
    return VALID


# -- block helper predicates --------------------------------------------------


def parents_older_than_block(b: Block, view: ChainHead) -> bool:
    return all(p.slot < b.slot and view.slot_of(p.id) in (None, p.slot) for p in b.parents)


def parents_mutually_compatible(b: Block, view: ChainHead) -> bool:
    ids = [p.id for p in b.parents]
    return all(view.compatible(x, y) for i, x in enumerate(ids) for y in ids[i + 1:])


def _parent_slots(view: ChainHead, bid: BlockId) -> tuple[Slot, ...] | None:
    blk = view.blocks.get(bid)
    if blk is not None:
        return tuple(p.slot for p in blk.parents)
    meta = view.final_meta.get(bid)
    return meta[1] if meta else None


def grandparent_older_than_parent(b: Block, view: ChainHead) -> bool:
    """Per thread, each grandparent is at most as recent as ``b``'s own parent there."""
    for p in b.parents:
        gps = _parent_slots(view, p.id)
        if not gps:
            continue
        for thread, gp_slot in enumerate(gps):
            if b.parents[thread].slot < gp_slot:
                return False
    return True


def certificates_endorse_right_parent(b: Block, draw: Draw, verifier: Verifier, params: Params) -> Verdict:
    tp = b.parents[b.slot.thread]
    if not b.certificates:
        return Verdict(False, NO_CERTIFICATE)
    for c in b.certificates:
        if c.endorsed_block != tp.id:
            return Verdict(False, WRONG_PARENT_CERTIFICATE)
    # a genesis block never had endorsers of its own slot to certify it
    if tp.slot.period > 0 and not any(c.slot == tp.slot for c in b.certificates):
        return Verdict(False, NO_SAME_PERIOD_CERTIFICATE)
    for c in b.certificates:
        if not is_valid_certificate(c, draw, verifier, params):
            return Verdict(False, INVALID_CERTIFICATE)
    return VALID


# -- blocks -------------------------------------------------------------------


def is_valid_block(b: Block, view: ChainHead, draw: Draw, verifier: Verifier, params: Params,
                   now_ms: int) -> BlockVerdict:
    """Accept, reject with a reason, or defer until missing parents arrive."""
    T = params.threads
    if (b.is_genesis or len(b.parents) != T or not 0 <= b.slot.thread < T
            or any(p.slot.thread != t for t, p in enumerate(b.parents))):
        return BlockVerdict(REJECT, BAD_STRUCTURE)
    if slot_time(b.slot, params.t0_ms, T) > now_ms + params.clock_skew_ms:
        return BlockVerdict(REJECT, TOO_EARLY)
    if not all(p.slot < b.slot for p in b.parents):
        return BlockVerdict(REJECT, PARENT_NOT_OLDER)
    if b.size_bits > params.max_block_bits:
        return BlockVerdict(REJECT, OVERSIZE)
    if draw(b.slot).producer != b.producer:
        return BlockVerdict(REJECT, WRONG_DRAW)
    if b.signature.signer != b.producer or not verifier.verify(b.signature, BlockHeader.payload(b.slot, b.id)):
        return BlockVerdict(REJECT, BAD_SIGNATURE)
    v = certificates_endorse_right_parent(b, draw, verifier, params)
    if not v:
        return BlockVerdict(REJECT, v.reason)
    for op in b.operations:
        if isinstance(op, Transaction):
            v = is_valid_transaction(op, b.slot.thread, verifier, params)
        else:
            v = is_valid_denunciation(op, draw, verifier, params)
        if not v:
            return BlockVerdict(REJECT, v.reason if v.reason == WRONG_SHARD else BAD_OPERATION)
    if any(p.id in view.stale for p in b.parents):
        return BlockVerdict(REJECT, STALE_PARENT)
    missing = tuple(p.id for p in b.parents if p.id not in view)
    if missing:
        return BlockVerdict(DEFER, "missing-parents", missing)
    if not parents_older_than_block(b, view):
        return BlockVerdict(REJECT, PARENT_NOT_OLDER)
    if not parents_mutually_compatible(b, view):
        return BlockVerdict(REJECT, INCOMPATIBLE_PARENTS)
    if not grandparent_older_than_parent(b, view):
        return BlockVerdict(REJECT, GRANDPARENT_NEWER)
    if view.conflicts_with_final(b):
        return BlockVerdict(REJECT, CONFLICTS_WITH_FINAL)
    return BlockVerdict(ACCEPT)
