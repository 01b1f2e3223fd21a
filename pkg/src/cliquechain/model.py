"""Domain types, canonical byte encoding, digests and modeled signatures.

Every message type is an immutable value. Digests are 256-bit blake2b over a
fixed-layout big-endian encoding (see ``docs/serialization.md``).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Union

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

Address = bytes
BlockId = bytes


class ConfigError(ValueError):
    """Invalid protocol or scenario configuration."""


def digest(*parts: bytes) -> bytes:
    return hashlib.blake2b(b"".join(parts), digest_size=DIGEST_SIZE).digest()


def hexid(d: bytes) -> str:
    return d.hex()


class Slot(NamedTuple):
    """A (period, thread) block slot. Tuple order is slot-time order."""

    period: int
    thread: int

    def time_ms(self, t0_ms: int, threads: int) -> int:
        return slot_time(self, t0_ms, threads)

    def __str__(self) -> str:
        return f"({self.period},{self.thread})"


def slot_time(s: Slot, t0_ms: int, threads: int) -> int:
    """Start time of ``s`` in ms since genesis of thread 0."""
    return s.period * t0_ms + s.thread * (t0_ms // threads)


def check_threads(threads: int) -> int:
    if threads < 1 or threads & (threads - 1):
        raise ConfigError(f"thread count must be a power of two, got {threads}")
    return threads.bit_length() - 1


def shard_of(address: Address, threads: int) -> int:
    """Thread owning ``address``: the value of its first log2(threads) bits."""
    bits = check_threads(threads)
    if bits == 0:
        return 0
    return int.from_bytes(address[:4], "big") >> (32 - bits)


# ---------------------------------------------------------------------------
# modeled signatures


@dataclass(frozen=True)
class ModeledSignature:
    signer: Address
    payload_digest: bytes
    tag: bytes


@dataclass(frozen=True)
class Keypair:
    secret: bytes

    @cached_property
    def address(self) -> Address:
        return address_of(self.secret)

    def sign(self, payload_digest: bytes) -> ModeledSignature:
        return ModeledSignature(self.address, payload_digest, _tag(self.secret, payload_digest))


def address_of(secret: bytes) -> Address:
    return digest(b"address", secret)


def _tag(secret: bytes, payload_digest: bytes) -> bytes:
    return hashlib.blake2b(payload_digest, key=secret, digest_size=DIGEST_SIZE).digest()


def keypair_from_seed(seed: bytes | str) -> Keypair:
    if isinstance(seed, str):
        seed = seed.encode()
    return Keypair(digest(b"secret", seed))


def keypair_in_shard(seed: str, thread: int, threads: int) -> Keypair:
    """First keypair derived from ``seed`` whose address lands in ``thread``."""
    i = 0
    while True:
        kp = keypair_from_seed(f"{seed}/{i}")
        if shard_of(kp.address, threads) == thread:
            return kp
        i += 1


class KeyRegistry:
    """Public-key directory of the simulated world.

    Verification recomputes the keyed tag from the secret registered for the
    signer, so a tag can only be produced by the holder of that secret.
    """

    def __init__(self) -> None:
        self._secrets: dict[Address, bytes] = {}

    def register(self, kp: Keypair) -> Address:
        self._secrets[kp.address] = kp.secret
        return kp.address

    def __contains__(self, address: Address) -> bool:
        return address in self._secrets

    def verify(self, sig: ModeledSignature, payload_digest: bytes) -> bool:
        if sig.payload_digest != payload_digest:
            return False
        secret = self._secrets.get(sig.signer)
        if secret is None:
            return False
        return _tag(secret, payload_digest) == sig.tag


# ---------------------------------------------------------------------------
# messages


_pack_slot_index = struct.Struct(">QHH").pack


def _slot_bytes(s: Slot) -> bytes:
    return struct.pack(">QH", s.period, s.thread)


@dataclass(frozen=True)
class Endorsement:
    slot: Slot
    index: int
    endorsed_block: BlockId
    endorser: Address
    signature: ModeledSignature

    @staticmethod
    def payload(slot: Slot, index: int, endorsed_block: BlockId, endorser: Address) -> bytes:
        return digest(b"endorsement", _pack_slot_index(slot.period, slot.thread, index), endorsed_block, endorser)

    @classmethod
    def create(cls, kp: Keypair, slot: Slot, index: int, endorsed_block: BlockId) -> "Endorsement":
        p = cls.payload(slot, index, endorsed_block, kp.address)
        e = cls(slot, index, endorsed_block, kp.address, kp.sign(p))
        e.__dict__["id"] = p  # prime the cached id
        return e

    @cached_property
    def id(self) -> bytes:
        return Endorsement.payload(self.slot, self.index, self.endorsed_block, self.endorser)


@dataclass(frozen=True)
class Certificate:
    slot: Slot
    endorsed_block: BlockId
    endorsements: tuple[Endorsement, ...]

    @property
    def key(self) -> tuple[Slot, BlockId]:
        return (self.slot, self.endorsed_block)

    @cached_property
    def encoded(self) -> bytes:
        return _enc_cert_fields(self)

    @cached_property
    def id(self) -> bytes:
        return digest(b"certificate", encode(self))


@dataclass(frozen=True)
class Transaction:
    sender: Address
    receiver: Address
    amount: int
    fee: int
    nonce: int
    signature: ModeledSignature

    @staticmethod
    def payload(sender: Address, receiver: Address, amount: int, fee: int, nonce: int) -> bytes:
        return digest(b"transaction", sender, receiver, struct.pack(">QQQ", amount, fee, nonce))

    @classmethod
    def create(cls, kp: Keypair, receiver: Address, amount: int, fee: int, nonce: int) -> "Transaction":
        p = cls.payload(kp.address, receiver, amount, fee, nonce)
        return cls(kp.address, receiver, amount, fee, nonce, kp.sign(p))

    @cached_property
    def id(self) -> bytes:
        return Transaction.payload(self.sender, self.receiver, self.amount, self.fee, self.nonce)


@dataclass(frozen=True)
class BlockHeader:
    """Signed (slot, block id) pair; the evidence unit of a double-block denunciation."""

    slot: Slot
    block_id: BlockId
    producer: Address
    signature: ModeledSignature

    @staticmethod
    def payload(slot: Slot, block_id: BlockId) -> bytes:
        return digest(b"block-header", _slot_bytes(slot), block_id)


DOUBLE_BLOCK = 0
DOUBLE_ENDORSEMENT = 1


@dataclass(frozen=True)
class Denunciation:
    kind: int
    offender: Address
    evidence_a: Union[BlockHeader, Endorsement]
    evidence_b: Union[BlockHeader, Endorsement]

    @property
    def slot(self) -> Slot:
        return self.evidence_a.slot

    @property
    def key(self) -> tuple:
        """Identity of the offence; a second denunciation with the same key is a replay."""
        index = self.evidence_a.index if self.kind == DOUBLE_ENDORSEMENT else -1
        return (self.kind, self.offender, self.slot, index)

    @cached_property
    def id(self) -> bytes:
        return digest(b"denunciation", encode(self))


Operation = Union[Transaction, Denunciation]


class Parent(NamedTuple):
    id: BlockId
    slot: Slot


@dataclass(frozen=True)
class Block:
    slot: Slot
    parents: tuple[Parent, ...]
    certificates: tuple[Certificate, ...]
    operations: tuple[Operation, ...]
    producer: Address
    signature: ModeledSignature = field(compare=False)

    @staticmethod
    def content_id(slot, parents, certificates, operations, producer) -> BlockId:
        return digest(b"block", _encode_block_body(slot, parents, certificates, operations, producer))

    @classmethod
    def create(cls, kp: Keypair, slot: Slot, parents, certificates=(), operations=()) -> "Block":
        parents, certificates, operations = tuple(parents), tuple(certificates), tuple(operations)
        bid = cls.content_id(slot, parents, certificates, operations, kp.address)
        sig = kp.sign(BlockHeader.payload(slot, bid))
        b = cls(slot, parents, certificates, operations, kp.address, sig)
        b.__dict__["id"] = bid
        return b

    @cached_property
    def id(self) -> BlockId:
        return Block.content_id(self.slot, self.parents, self.certificates, self.operations, self.producer)

    @property
    def is_genesis(self) -> bool:
        return not self.parents

    @property
    def header(self) -> BlockHeader:
        return BlockHeader(self.slot, self.id, self.producer, self.signature)

    def thread_parent(self) -> Parent | None:
        return self.parents[self.slot.thread] if self.parents else None

    @cached_property
    def size_bits(self) -> int:
        return 8 * len(encode(self))

    def __hash__(self) -> int:
        return hash(self.id)

    def __eq__(self, other) -> bool:
        return isinstance(other, Block) and self.id == other.id


GENESIS_SECRET = b"\x00" * DIGEST_SIZE


def genesis_blocks(threads: int) -> list[Block]:
    """One parentless block in period 0 of every thread, signed by a fixed key."""
    kp = Keypair(GENESIS_SECRET)
    return [Block.create(kp, Slot(0, t), ()) for t in range(threads)]


# ---------------------------------------------------------------------------
# canonical encoding
#
# tag byte, then fields in declaration order; integers big-endian fixed
# width; sequences carry a u32 count prefix.

_T_ENDORSEMENT, _T_CERT, _T_TX, _T_HEADER, _T_DENUNCIATION, _T_BLOCK = range(1, 7)


def _enc_sig(s: ModeledSignature) -> bytes:
    return s.signer + s.payload_digest + s.tag


def _enc_endorsement(e: Endorsement) -> bytes:
    return (bytes([_T_ENDORSEMENT]) + _slot_bytes(e.slot) + struct.pack(">H", e.index)
            + e.endorsed_block + e.endorser + _enc_sig(e.signature))


def _enc_cert(c: Certificate) -> bytes:
    return c.encoded


def _enc_cert_fields(c: Certificate) -> bytes:
    return (bytes([_T_CERT]) + _slot_bytes(c.slot) + c.endorsed_block
            + struct.pack(">I", len(c.endorsements)) + b"".join(_enc_endorsement(e) for e in c.endorsements))


def _enc_tx(t: Transaction) -> bytes:
    return (bytes([_T_TX]) + t.sender + t.receiver + struct.pack(">QQQ", t.amount, t.fee, t.nonce)
            + _enc_sig(t.signature))


def _enc_header(h: BlockHeader) -> bytes:
    return bytes([_T_HEADER]) + _slot_bytes(h.slot) + h.block_id + h.producer + _enc_sig(h.signature)


def _enc_denunciation(d: Denunciation) -> bytes:
    return bytes([_T_DENUNCIATION, d.kind]) + d.offender + encode(d.evidence_a) + encode(d.evidence_b)


def _encode_block_body(slot, parents, certificates, operations, producer) -> bytes:
    out = [_slot_bytes(slot), producer, struct.pack(">I", len(parents))]
    out += [p.id + _slot_bytes(p.slot) for p in parents]
    out.append(struct.pack(">I", len(certificates)))
    out += [_enc_cert(c) for c in certificates]
    out.append(struct.pack(">I", len(operations)))
    out += [encode(op) for op in operations]
    return b"".join(out)


def encode(item) -> bytes:
    """Injective, deterministic byte encoding of any message type."""
    if isinstance(item, Endorsement):
        return _enc_endorsement(item)
    if isinstance(item, Certificate):
        return _enc_cert(item)
    if isinstance(item, Transaction):
        return _enc_tx(item)
    if isinstance(item, BlockHeader):
        return _enc_header(item)
    if isinstance(item, Denunciation):
        return _enc_denunciation(item)
    if isinstance(item, Block):
        body = _encode_block_body(item.slot, item.parents, item.certificates, item.operations, item.producer)
        return bytes([_T_BLOCK]) + body + _enc_sig(item.signature)
    raise TypeError(f"cannot encode {type(item).__name__}")


class DecodeError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def slot(self) -> Slot:
        period, thread = self.unpack(">QH")
        return Slot(period, thread)

    def sig(self) -> ModeledSignature:
        return ModeledSignature(self.take(32), self.take(32), self.take(32))

    def count(self) -> int:
        (n,) = self.unpack(">I")
        if n > len(self.data):
            raise DecodeError("implausible sequence length")
        return n

    def item(self):
        (tag,) = self.take(1)
        if tag == _T_ENDORSEMENT:
            slot = self.slot()
            (index,) = self.unpack(">H")
            return Endorsement(slot, index, self.take(32), self.take(32), self.sig())
        if tag == _T_CERT:
            slot, blk = self.slot(), self.take(32)
            return Certificate(slot, blk, tuple(self.expect(Endorsement) for _ in range(self.count())))
        if tag == _T_TX:
            sender, receiver = self.take(32), self.take(32)
            amount, fee, nonce = self.unpack(">QQQ")
            return Transaction(sender, receiver, amount, fee, nonce, self.sig())
        if tag == _T_HEADER:
            return BlockHeader(self.slot(), self.take(32), self.take(32), self.sig())
        if tag == _T_DENUNCIATION:
            (kind,) = self.take(1)
            if kind not in (DOUBLE_BLOCK, DOUBLE_ENDORSEMENT):
                raise DecodeError(f"bad denunciation kind {kind}")
            offender = self.take(32)
            ev = BlockHeader if kind == DOUBLE_BLOCK else Endorsement
            return Denunciation(kind, offender, self.expect(ev), self.expect(ev))
        if tag == _T_BLOCK:
            slot, producer = self.slot(), self.take(32)
            parents = tuple(Parent(self.take(32), self.slot()) for _ in range(self.count()))
            certs = tuple(self.expect(Certificate) for _ in range(self.count()))
            ops = tuple(self.expect((Transaction, Denunciation)) for _ in range(self.count()))
            return Block(slot, parents, certs, ops, producer, self.sig())
        raise DecodeError(f"unknown type tag {tag}")

    def expect(self, types):
        it = self.item()
        if not isinstance(it, types):
            raise DecodeError(f"unexpected {type(it).__name__}")
        return it


def decode(data: bytes):
    """Inverse of :func:`encode`; raises DecodeError on malformed input."""
    r = _Reader(data)
    it = r.item()
    if r.pos != len(data):
        raise DecodeError("trailing bytes")
    return it
