from fractions import Fraction

import pytest
from _runs import full_run

from cliquechain.analysis import lemma1_bound
from cliquechain.config import Partition, load_bundled
from cliquechain.model import Slot
from cliquechain.netsim import Network, build_world, partition_heal_check, run_scenario, stake_split


def test_all_honest_run_is_fully_live():
    rep, _ = full_run("canonical")
    d = rep.data
    assert d["params"]["threads"] == 2 and d["params"]["endorsers"] == 8 and d["params"]["threshold"] == 6
    assert d["periods"] == 100
    assert rep.liveness == 1.0
    assert len({v["digest"] for v in d["final_prefix"].values()}) == 1
    assert d["safety"]["identical_prefix"]


def test_fork_attacker_never_finalizes_its_blocks():
    rep, _ = full_run("fork_attacker")
    a = rep.data["attack"]
    assert a["fork_blocks"] > 0
    assert a["finalized_by_honest"] == 0
    assert rep.data["safety"]["converged"]


def test_multi_staker_respects_lemma_bound_over_a_thousand_slots():
    rep, _ = full_run("multi_staker")
    d = rep.data
    assert d["periods"] * d["params"]["threads"] >= 1000
    lem = d["lemma"]
    assert lem["slots_audited"] > 0
    assert lem["violations"] == 0 and lem["attacker_only_certificates"] == 0
    w = lem["worst"]
    assert w["certified"] <= lemma1_bound(w["n"], w["k"])


def test_equivocations_are_denounced_exactly_once_per_node():
    rep, _ = full_run("equivocating_endorser")
    d = rep.data
    made = d["metrics"]["adv"]["attack.equivocations"]
    assert made > 0
    for name, tally in d["denunciations"].items():
        assert tally["endorsement"] == made, name
    # every offence was punished once in the shared ledger
    assert d["conservation"]["slashed"] > 0


def test_undrawn_withholder_does_not_hurt_liveness():
    cfg = load_bundled("canonical").with_(strategy="withholder", stake_share=Fraction(1, 10**15), periods=40)
    world = build_world(cfg)
    adv = {kp.address for kp in world.keys["adversary"]}
    ref = world.honest[0]
    drawn = any(set(ref.draw(s).endorsers) & adv or ref.draw(s).producer in adv
                for s in (Slot(p, t) for p in range(cfg.periods + cfg.drain + 1) for t in range(2)))
    assert not drawn
    assert run_scenario(cfg).liveness == 1.0


def test_partition_heal_check():
    rep, _ = full_run("partition_heal")
    assert rep.data["partitions"] == [[20, 40, ["h3"]]]
    assert partition_heal_check(rep)
    assert partition_heal_check(full_run("canonical")[0])
    cfg = load_bundled("partition_heal").with_(periods=40, partitions=(Partition(10, 10_000, ("h2", "h3")),))
    assert not partition_heal_check(run_scenario(cfg))


def test_stake_split_gives_exact_adversary_share():
    cfg = load_bundled("withholder_third")
    honest, adv = stake_split(cfg)
    assert Fraction(sum(adv), sum(honest) + sum(adv)) == Fraction(1, 3)


def test_network_delays_are_capped_and_rushing():
    cfg = load_bundled("fork_attacker")
    world = build_world(cfg)
    net = world.net
    assert net.delay("adv") == 0
    assert all(0 < net.delay("h0") <= world.params.delta_max for _ in range(200))


def test_report_files_have_expected_shape():
    rep, _ = full_run("canonical")
    head = rep.series_csv().splitlines()[0]
    assert head == "period,liveness,cliqueCount,messages,verifications"
    assert len(rep.series) == rep.data["periods"] + rep.data["drain_periods"]
    assert rep.ledger  # final ledger dump


@pytest.mark.parametrize("name", ["canonical", "partition_heal"])
def test_same_seed_same_report(name):
    a = run_scenario(load_bundled(name), 30)
    b = run_scenario(load_bundled(name), 30)
    assert a.digest() == b.digest()
    assert a.to_json() == b.to_json()


def test_other_seed_other_report():
    cfg = load_bundled("canonical")
    assert run_scenario(cfg, 20).digest() != run_scenario(cfg.with_(seed=99), 20).digest()
