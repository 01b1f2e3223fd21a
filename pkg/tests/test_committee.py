import math
import subprocess
import sys
from fractions import Fraction

import pytest

from cliquechain.analysis import binom_tail
from cliquechain.committee import (EmptyStakeTable, StakeTable, committee, committee_block_producer,
                                   committee_endorsers, time_to_slot)
from cliquechain.model import Slot, keypair_from_seed, slot_time

SEED = bytes(range(32))
ATTACKER = keypair_from_seed("attacker").address
HONEST = keypair_from_seed("honest").address
THIRD = StakeTable({ATTACKER: 1, HONEST: 2})


def test_time_to_slot_examples():
    assert time_to_slot(0, 16000, 32) == Slot(0, 0)
    assert time_to_slot(500, 16000, 32) == Slot(0, 1)
    assert time_to_slot(16499, 16000, 32) == Slot(1, 0)
    with pytest.raises(ValueError):
        time_to_slot(-1, 16000, 32)


def test_time_to_slot_inverts_slot_time_by_scan():
    t0, T = 1600, 8
    starts = [(slot_time(Slot(p, t), t0, T), Slot(p, t)) for p in range(4) for t in range(T)]
    for ms in range(0, 4 * t0):
        expected = max(s for start, s in starts if start <= ms)
        assert time_to_slot(ms, t0, T) == expected


def test_single_staker_always_drawn():
    solo = StakeTable({HONEST: 5})
    for p in range(50):
        assert committee_block_producer(Slot(p, 0), solo, SEED) == HONEST
    assert committee_endorsers(Slot(0, 0), solo, SEED, 1) == [(HONEST, 0)]


def test_empty_table_raises():
    with pytest.raises(EmptyStakeTable):
        committee_block_producer(Slot(0, 0), StakeTable({}), SEED)


def test_producer_frequency_matches_stake():
    n = 100_000
    hits = sum(committee_block_producer(Slot(p, 0), THIRD, SEED) == ATTACKER for p in range(n))
    sigma = math.sqrt(n * (1 / 3) * (2 / 3))
    assert abs(hits - n / 3) <= 3 * sigma


def test_endorser_counts_are_binomial():
    slots, E = 10_000, 100
    counts = [committee(Slot(p, 1), THIRD, SEED, E).endorsers.count(ATTACKER) for p in range(slots)]
    mean = sum(counts) / slots
    assert abs(mean - 100 / 3) <= 1
    frac = sum(c >= 34 for c in counts) / slots
    exact = float(binom_tail(100, 34, Fraction(1, 3)))
    assert abs(exact - 0.48120) < 1e-5
    assert abs(frac - exact) <= 0.02


def test_draw_is_deterministic_across_processes():
    code = (
        "from cliquechain.committee import StakeTable, committee\n"
        "from cliquechain.model import Slot, keypair_from_seed\n"
        "a, h = keypair_from_seed('attacker').address, keypair_from_seed('honest').address\n"
        "c = committee(Slot(7, 3), StakeTable({a: 1, h: 2}), bytes(range(32)), 16)\n"
        "print(c.producer.hex(), ''.join(x.hex()[:4] for x in c.endorsers))\n"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout.split()
    c = committee(Slot(7, 3), THIRD, SEED, 16)
    assert out == [c.producer.hex(), "".join(x.hex()[:4] for x in c.endorsers)]


def test_stake_table_order_independent():
    a = StakeTable({ATTACKER: 1, HONEST: 2})
    b = StakeTable({HONEST: 2, ATTACKER: 1})
    assert a == b and a.digest == b.digest
    assert committee(Slot(3, 0), a, SEED, 8) == committee(Slot(3, 0), b, SEED, 8)
    assert StakeTable({ATTACKER: 1, HONEST: 3}) != a


def test_seed_changes_draw():
    draws = {committee(Slot(1, 0), THIRD, bytes([i]) * 32, 32).endorsers for i in range(4)}
    assert len(draws) == 4
