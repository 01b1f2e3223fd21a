import random

import pytest

from cliquechain.graph import ChainHead, CliqueCapExceeded, best_clique, maximal_cliques
from cliquechain.model import Block, Certificate, Parent, Slot, genesis_blocks, keypair_from_seed, slot_time

T0 = 16000
KP = keypair_from_seed("graph")


def mk(slot, parents, certs=(), salt=0):
    ops = ()
    kp = KP if not salt else keypair_from_seed(f"graph/{salt}")
    return Block.create(kp, slot, [Parent(p.id, p.slot) for p in parents], certs, ops)


def cert(slot, bid):
    return Certificate(slot, bid, ())


def head(threads=1, delta_f=4, cap=1024):
    return ChainHead(T0, threads, delta_f, cap, genesis_blocks(threads))


def edges_of_g(h):
    return sum(1 for b in h.blocks.values() for p in b.parents if p.id in h.blocks)


def edges_of_gc(h):
    return sum(len(v) for v in h.adj.values()) // 2


def test_genesis_insertion():
    h = head(threads=2)
    assert len(h.blocks) == 2 and edges_of_g(h) == 0
    assert h.blockclique() == frozenset(h.blocks)
    assert h.report().blockclique_fitness == 2


def test_first_block_adds_two_parent_edges():
    h = head(threads=2)
    g0, g1 = genesis_blocks(2)
    h.append(mk(Slot(1, 0), [g0, g1]))
    assert len(h.blocks) == 3 and edges_of_g(h) == 2


def test_append_refuses_unknown_parents():
    h = head(threads=1)
    (g,) = genesis_blocks(1)
    a = mk(Slot(1, 0), [g])
    with pytest.raises(ValueError):
        h.append(mk(Slot(2, 0), [a]))


def random_dag(rng, threads, n, fork_rate=0.3, salt_base=0):
    """Blocks with one parent per thread, each parent strictly older, no
    grandparent newer than the parent of its thread and pairwise compatible
    parents, as validity demands."""
    gs = genesis_blocks(threads)
    probe = ChainHead(T0, threads, 10**6, 10**9, gs)
    blocks = list(gs)
    slots = sorted({Slot(p, t) for p in range(1, n + 1) for t in range(threads)})
    out = []
    for i, s in enumerate(slots[:n]):
        for _ in range(50):
            ps = []
            for t in range(threads):
                older = [b for b in blocks if b.slot.thread == t and b.slot < s]
                ps.append(older[-1] if rng.random() > fork_rate else rng.choice(older))
            grand_ok = all(ps[t].slot >= gp.slot for p in ps for t, gp in enumerate(p.parents))
            compat = all(probe.compatible(x.id, y.id) for j, x in enumerate(ps) for y in ps[j + 1:])
            if grand_ok and compat:
                break
        else:
            continue
        b = mk(s, ps, salt=salt_base + i + 1)
        probe.append(b)
        blocks.append(b)
        out.append(b)
    return gs, out


def test_random_dag_insertion_order_is_topological():
    rng = random.Random(5)
    gs, bs = random_dag(rng, 4, 200)
    h = ChainHead(T0, 4, 10**6, 10**9, gs)
    for b in bs:
        h.append(b)
    pos = {bid: i for i, bid in enumerate(h.blocks)}
    for b in h.blocks.values():
        for p in b.parents:
            assert pos[p.id] < pos[b.id]


def test_chain_in_one_thread_is_complete():
    h = head(threads=1)
    (g,) = genesis_blocks(1)
    a = mk(Slot(1, 0), [g])
    b = mk(Slot(2, 0), [a])
    h.append(a)
    h.append(b)
    assert edges_of_gc(h) == 3


def test_parallel_blocks_in_different_threads_are_compatible():
    h = head(threads=2)
    g0, g1 = genesis_blocks(2)
    a = mk(Slot(1, 0), [g0, g1])
    b = mk(Slot(1, 1), [g0, g1])
    h.append(a)
    h.append(b)
    assert h.compatible(a.id, b.id)


def test_same_thread_parent_is_a_fork():
    h = head(threads=2)
    g0, g1 = genesis_blocks(2)
    a = mk(Slot(1, 0), [g0, g1])
    a2 = mk(Slot(1, 0), [g0, g1], salt=9)
    c = mk(Slot(2, 0), [g0, g1], salt=10)
    for x in (a, a2, c):
        h.append(x)
    assert not h.compatible(a.id, a2.id)
    assert not h.compatible(a.id, c.id)


def direct_ok(x, y, threads):
    if x.is_genesis and y.is_genesis:
        return True
    dt = abs(slot_time(x.slot, T0, threads) - slot_time(y.slot, T0, threads))
    return x.slot.thread != y.slot.thread and dt < T0


def compat_oracle(blocks, threads):
    """Compatibility from scratch: ancestors are compatible; otherwise every
    pair drawn from the two ancestor closures must pass the direct rule."""
    by_id = {b.id: b for b in blocks}
    anc = {}
    for b in blocks:
        s = set()
        for p in b.parents:
            if p.id in by_id:
                s |= {p.id} | anc[p.id]
        anc[b.id] = s
    out = {}
    for x in blocks:
        for y in blocks:
            if x.id >= y.id:
                continue
            if x.id in anc[y.id] or y.id in anc[x.id]:
                ok = True
            else:
                ok = True
                for xa in anc[x.id] | {x.id}:
                    for ya in anc[y.id] | {y.id}:
                        if xa == ya or xa in anc[ya] or ya in anc[xa]:
                            continue
                        if not direct_ok(by_id[xa], by_id[ya], threads):
                            ok = False
            out[(x.id, y.id)] = ok
    return out


@pytest.mark.parametrize("threads,seed", [(1, 1), (2, 2), (2, 3), (4, 4), (4, 5)])
def test_compatibility_matches_from_scratch_oracle(threads, seed):
    rng = random.Random(seed)
    gs, bs = random_dag(rng, threads, 14, fork_rate=0.5, salt_base=100 * seed)
    h = ChainHead(T0, threads, 10**6, 10**9, gs)
    for b in bs:
        h.append(b)
    for (x, y), ok in compat_oracle(gs + bs, threads).items():
        assert h.compatible(x, y) == ok


def test_speculative_certificate_follows_endorsed_block():
    h = head(threads=1)
    (g,) = genesis_blocks(1)
    a = mk(Slot(1, 0), [g])
    a2 = mk(Slot(1, 0), [g], salt=3)
    h.append(a)
    h.append(a2)
    c = cert(Slot(1, 0), a.id)
    assert h.register_certificate(c)
    assert h.register_certificate(c)
    assert len(h.certs) == 1
    cliques = h.max_cliques()
    assert [c.key in cl for cl in cliques] == [a.id in cl for cl in cliques]
    assert not h.register_certificate(cert(Slot(1, 0), b"\x00" * 32))


def test_included_certificate_moves_to_including_block():
    h = head(threads=1)
    (g,) = genesis_blocks(1)
    a = mk(Slot(1, 0), [g])
    h.append(a)
    c = cert(Slot(1, 0), a.id)
    h.register_certificate(c)
    b = mk(Slot(2, 0), [a], [c])
    h.append(b)
    cv = h.certs[c.key]
    assert cv.anchor == b.id and not cv.speculative
    assert h.anchored[b.id] == {c.key} and a.id not in h.anchored


def test_max_cliques_small_graphs():
    k5 = {i: {j for j in range(5) if j != i} for i in range(5)}
    assert maximal_cliques(k5) == [frozenset(range(5))]
    assert maximal_cliques({}) == []
    with pytest.raises(CliqueCapExceeded):
        maximal_cliques({i: set() for i in range(5)}, cap=3)


def test_rival_forks_give_two_overlapping_cliques():
    h = head(threads=1)
    (g,) = genesis_blocks(1)
    a = mk(Slot(1, 0), [g])
    b = mk(Slot(2, 0), [a])
    b2 = mk(Slot(2, 0), [a], salt=4)
    for x in (a, b, b2):
        h.append(x)
    cl = h.block_cliques()
    assert len(cl) == 2
    assert cl[0] & cl[1] == {g.id, a.id}


def test_tie_break_prefers_smaller_digest_sum():
    lo, hi = bytes([0x0a]) + b"\xff" * 31, bytes([0x0b]) + b"\x00" * 31
    adj = {lo: set(), hi: set()}
    cl = maximal_cliques(adj)
    pick = best_clique(cl, len, lambda c: sum(int.from_bytes(x, "big") for x in c))
    assert pick == {lo}


def test_fitness_counts_descendants_and_certificates():
    h = head(threads=1, delta_f=100)
    (g,) = genesis_blocks(1)
    b1 = mk(Slot(1, 0), [g])
    h.append(b1)
    assert h.descendant_fitness(b1.id, h.blockclique()) == 0
    h.register_certificate(cert(Slot(1, 0), b1.id))
    assert h.descendant_fitness(b1.id, h.blockclique()) == 1
    b2 = mk(Slot(2, 0), [b1], [cert(Slot(1, 0), b1.id)])
    h.append(b2)
    b3 = mk(Slot(3, 0), [b2], [cert(Slot(2, 0), b2.id)])
    h.append(b3)
    bc = h.blockclique()
    assert h.descendant_fitness(b1.id, bc) == 4
    assert h.descendant_counts(bc) == {x: h.descendant_fitness(x, bc) for x in bc}


def test_short_chain_finalizes_with_zero_margin():
    h = head(threads=1, delta_f=0)
    (g,) = genesis_blocks(1)
    b1 = mk(Slot(1, 0), [g])
    h.append(b1)
    h.register_certificate(cert(Slot(1, 0), b1.id))
    b2 = mk(Slot(2, 0), [b1], [cert(Slot(1, 0), b1.id)])
    h.append(b2)
    res = h.finalize_step()
    assert {b.id for b in res.final} == {g.id, b1.id}
    assert b2.id in h.blocks and not res.stale


def test_block_in_one_of_two_equal_cliques_is_undecided():
    h = head(threads=1, delta_f=0)
    (g,) = genesis_blocks(1)
    a = mk(Slot(1, 0), [g])
    a2 = mk(Slot(1, 0), [g], salt=5)
    h.append(a)
    h.append(a2)
    res = h.finalize_step()
    assert a.id not in {b.id for b in res.final} and a.id not in res.stale
    assert a.id in h.blocks and a2.id in h.blocks


def test_trailing_branch_goes_stale():
    df = 2
    h = head(threads=1, delta_f=df)
    (g,) = genesis_blocks(1)
    loser = mk(Slot(1, 0), [g], salt=6)
    h.append(loser)
    tip = g
    for p in range(1, df + 3):
        tip_new = mk(Slot(p, 0), [tip])
        h.append(tip_new)
        tip = tip_new
    rep = h.report()
    lose_fit = max(f for c, f in zip(rep.cliques, rep.fitness) if loser.id in c)
    assert rep.blockclique_fitness - lose_fit == df + 1
    res = h.finalize_step()
    assert loser.id in res.stale and loser.id in h.stale and loser.id not in h.blocks


def test_final_blocks_are_ancestor_closed():
    rng = random.Random(11)
    gs, bs = random_dag(rng, 2, 40, fork_rate=0.2, salt_base=500)
    h = ChainHead(T0, 2, 3, 10**6, gs)
    final = set()
    for b in bs:
        if all(p.id in h for p in b.parents) and not any(p.id in h.stale for p in b.parents):
            h.append(b)
            h.register_certificate(cert(b.slot, b.id))
            for x in h.finalize_step().final:
                assert all(p.id in final for p in x.parents)
                final.add(x.id)
    assert final
