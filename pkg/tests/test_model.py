import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cliquechain.model import (DOUBLE_BLOCK, DOUBLE_ENDORSEMENT, Block, BlockHeader, Certificate, ConfigError,
                               DecodeError, Denunciation, Endorsement, KeyRegistry, ModeledSignature, Parent,
                               Slot, Transaction, address_of, decode, encode, genesis_blocks, keypair_from_seed,
                               keypair_in_shard, shard_of, slot_time)

h32 = st.binary(min_size=32, max_size=32)
slots = st.builds(Slot, st.integers(0, 2**40), st.integers(0, 31))
sigs = st.builds(ModeledSignature, h32, h32, h32)
endorsements = st.builds(Endorsement, slots, st.integers(0, 0xFFFF), h32, h32, sigs)
u64 = st.integers(0, 2**64 - 1)
txs = st.builds(Transaction, h32, h32, u64, u64, u64, sigs)
headers = st.builds(BlockHeader, slots, h32, h32, sigs)


@st.composite
def certificates(draw):
    s, blk = draw(slots), draw(h32)
    es = draw(st.lists(endorsements, max_size=4))
    return Certificate(s, blk, tuple(Endorsement(s, e.index, blk, e.endorser, e.signature) for e in es))


@st.composite
def denunciations(draw):
    if draw(st.booleans()):
        return Denunciation(DOUBLE_BLOCK, draw(h32), draw(headers), draw(headers))
    return Denunciation(DOUBLE_ENDORSEMENT, draw(h32), draw(endorsements), draw(endorsements))


@st.composite
def blocks(draw):
    threads = draw(st.sampled_from([1, 2, 4]))
    s = Slot(draw(st.integers(1, 2**30)), draw(st.integers(0, threads - 1)))
    parents = tuple(Parent(draw(h32), Slot(draw(st.integers(0, 2**30)), t)) for t in range(threads))
    certs = tuple(draw(st.lists(certificates(), max_size=2)))
    ops = tuple(draw(st.lists(st.one_of(txs, denunciations()), max_size=3)))
    return Block(s, parents, certs, ops, draw(h32), draw(sigs))


def test_slot_time_formula():
    assert slot_time(Slot(0, 0), 16000, 32) == 0
    assert slot_time(Slot(0, 1), 16000, 32) == 500
    assert slot_time(Slot(3, 5), 16000, 32) == 3 * 16000 + 5 * 500
    assert sorted([Slot(1, 0), Slot(0, 31), Slot(0, 2)]) == [Slot(0, 2), Slot(0, 31), Slot(1, 0)]


def test_thread_count_must_be_power_of_two():
    with pytest.raises(ConfigError):
        shard_of(b"\x00" * 32, 3)


def test_shard_uses_leading_bits():
    addr = bytes([0b00000111]) + b"\xff" * 31
    assert shard_of(addr, 32) == 0
    assert shard_of(bytes([0b11111000]) + b"\x00" * 31, 32) == 31
    assert shard_of(b"\xff" * 32, 1) == 0


def test_shard_is_uniform_over_threads():
    n, T = 100_000, 4
    counts = [0] * T
    for i in range(n):
        counts[shard_of(address_of(i.to_bytes(8, "big")), T)] += 1
    sigma = math.sqrt(n * (1 / T) * (1 - 1 / T))
    assert all(abs(c - n / T) <= 3 * sigma for c in counts), counts
    chi2 = sum((c - n / T) ** 2 / (n / T) for c in counts)
    assert chi2 < 16.27  # 3 degrees of freedom, p = 0.001


def test_keypair_in_shard_lands_in_thread():
    for t in range(8):
        assert shard_of(keypair_in_shard("x", t, 8).address, 8) == t


def test_signatures_verify_only_for_owner():
    reg = KeyRegistry()
    kp, other = keypair_from_seed("a"), keypair_from_seed("b")
    reg.register(kp)
    sig = kp.sign(b"p" * 32)
    assert reg.verify(sig, b"p" * 32)
    assert not reg.verify(sig, b"q" * 32)
    forged = ModeledSignature(kp.address, b"p" * 32, other.sign(b"p" * 32).tag)
    assert not reg.verify(forged, b"p" * 32)
    assert not reg.verify(other.sign(b"p" * 32), b"p" * 32)  # unregistered


def _two_blocks():
    kp = keypair_from_seed("producer")
    g = genesis_blocks(2)
    a = Block.create(kp, Slot(1, 0), [Parent(g[0].id, g[0].slot), Parent(g[1].id, g[1].slot)])
    b = Block.create(kp, Slot(1, 0), [Parent(g[0].id, g[0].slot), Parent(b"\x01" * 32, g[1].slot)])
    return a, b


def test_serialization_is_deterministic_and_injective():
    a, b = _two_blocks()
    assert encode(a) == encode(a)
    assert a.id != b.id
    assert encode(a) != encode(b)


def test_block_id_ignores_signature():
    a, _ = _two_blocks()
    resigned = Block(a.slot, a.parents, a.certificates, a.operations, a.producer,
                     keypair_from_seed("other").sign(b"x" * 32))
    assert resigned.id == a.id
    assert encode(resigned) != encode(a)


def test_genesis_blocks_are_parentless_period_zero():
    gs = genesis_blocks(4)
    assert [g.slot for g in gs] == [Slot(0, t) for t in range(4)]
    assert all(g.is_genesis for g in gs)
    assert len({g.id for g in gs}) == 4


@settings(max_examples=150, deadline=None)
@given(blocks())
def test_block_round_trip(b):
    data = encode(b)
    back = decode(data)
    assert back == b and encode(back) == data
    assert back.parents == b.parents and back.certificates == b.certificates and back.operations == b.operations


@settings(max_examples=100, deadline=None)
@given(st.one_of(endorsements, certificates(), txs, headers, denunciations()))
def test_message_round_trip(x):
    assert decode(encode(x)) == x


def test_decode_rejects_garbage():
    a, _ = _two_blocks()
    data = encode(a)
    with pytest.raises(DecodeError):
        decode(data[:-1])
    with pytest.raises(DecodeError):
        decode(data + b"\x00")
    with pytest.raises(DecodeError):
        decode(b"\x63" + data[1:])
    rng = random.Random(1)
    for _ in range(200):
        cut = rng.randrange(len(data))
        with pytest.raises(DecodeError):
            decode(data[:cut])
