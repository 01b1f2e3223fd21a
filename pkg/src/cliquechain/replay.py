"""Scripted single-thread fork attack, replayed on the graph engine.

The attacker, drawn as producer one period after an honest block ``b_i``
was certified, builds on ``b_i``'s thread parent instead and reuses that
parent's certificate. The script follows the attack through three frames
and checks that the honest branch wins.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .graph import ChainHead
from .model import Block, Certificate, Endorsement, Parent, Slot, genesis_blocks, keypair_from_seed, slot_time

THREADS = 1


@dataclass
class ReplayResult:
    trace: list[dict]
    checks: dict
    names: dict[str, str] = field(default_factory=dict)
    periods: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def trace_text(self) -> str:
        lines = []
        for ev in self.trace:
            extra = " ".join(f"{k}={v}" for k, v in ev.items() if k not in ("frame", "t_ms", "event"))
            lines.append(f"frame={ev['frame']} t_ms={ev['t_ms']} {ev['event']} {extra}".rstrip())
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"trace": self.trace, "checks": self.checks, "blocks": self.names, "periods": self.periods},
                          sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.trace_text().encode()).hexdigest()


class _Script:
    def __init__(self, delta_f: int, endorsers: int, threshold: int, beta, t0_ms: int) -> None:
        self.t0 = t0_ms
        self.E = endorsers
        self.threshold = threshold
        self.attacker_indices = math.floor(Fraction(beta) * endorsers)
        if endorsers - self.attacker_indices < threshold:
            raise ValueError("honest indices cannot reach the threshold: the fork attack is not contained")
        self.head = ChainHead(t0_ms, THREADS, delta_f, genesis=genesis_blocks(THREADS))
        self.genesis = next(iter(self.head.blocks.values()))
        self.honest_producer = keypair_from_seed("replay/honest-producer")
        self.attacker = keypair_from_seed("replay/attacker")
        self.index_keys = [self.attacker if i < self.attacker_indices else keypair_from_seed(f"replay/honest/{i}")
                           for i in range(endorsers)]
        self.certs: dict[Slot, Certificate] = {}
        self.names: dict[bytes, str] = {self.genesis.id: "genesis"}
        self.trace: list[dict] = []
        self.frame = 0
        self.final: dict[str, int] = {}
        self.stale: dict[str, int] = {}
        self.lift: dict[str, int] = {}
        self.last_final = self.genesis

    def name(self, bid: bytes) -> str:
        return self.names.get(bid, bid.hex()[:12])

    def log(self, t: int, event: str, **kw) -> None:
        self.trace.append({"frame": self.frame, "t_ms": t, "event": event, **kw})

    def branch_fitness(self, bid: bytes) -> int:
        cl = [c for c in self.head.block_cliques() if bid in c]
        return max((self.head.clique_fitness(c) for c in cl), default=0)

    def settle(self, t: int, period: int) -> None:
        res = self.head.finalize_step()
        for b in res.final:
            self.last_final = b
            self.final.setdefault(self.name(b.id), period)
            self.log(t, "final", block=self.name(b.id))
        for bid in sorted(res.stale, key=self.name):
            self.stale.setdefault(self.name(bid), period)
            self.log(t, "stale", block=self.name(bid))

    def produce(self, period: int, parent: Block, label: str, by_attacker: bool = False,
                cert_slots: tuple[Slot, ...] | None = None) -> Block:
        s = Slot(period, 0)
        t = slot_time(s, self.t0, THREADS)
        certs = [c for cs, c in sorted(self.certs.items())
                 if c.endorsed_block == parent.id and (cert_slots is None or cs in cert_slots)]
        kp = self.attacker if by_attacker else self.honest_producer
        b = Block.create(kp, s, [Parent(parent.id, parent.slot)], certs)
        self.names[b.id] = label
        self.log(t, "block", block=label, parent=self.name(parent.id), producer="attacker" if by_attacker else "honest",
                 certificates=",".join(f"{c.slot}->{self.name(c.endorsed_block)}" for c in certs) or "-")
        if self.head.conflicts_with_final(b):
            # validity rejects it outright: its thread already has a newer final block
            self.stale.setdefault(label, period)
            self.log(t, "rejected", block=label, reason="conflicts-with-final")
            return b
        self.head.append(b)
        self.settle(t, period)
        return b

    def endorse(self, period: int, honest_target: Block, attacker_target: Block | None = None) -> Certificate | None:
        """Honest indices vote for ``honest_target``; attacker indices vote for
        ``attacker_target`` or stay silent."""
        s = Slot(period, 0)
        t = slot_time(s, self.t0, THREADS) + self.t0 // 2
        votes = {}
        for i, kp in enumerate(self.index_keys):
            target = attacker_target if i < self.attacker_indices else honest_target
            if target is not None:
                votes.setdefault(target.id, []).append(Endorsement.create(kp, s, i, target.id))
        formed = None
        for bid in sorted(votes, key=self.name):
            es = votes[bid]
            self.log(t, "endorsements", slot=str(s), block=self.name(bid), count=len(es), threshold=self.threshold)
            if len(es) >= self.threshold:
                cert = Certificate(s, bid, tuple(es))
                self.certs[s] = cert
                before = self.branch_fitness(bid)
                self.head.register_certificate(cert)
                self.lift[self.name(bid)] = self.branch_fitness(bid) - before
                formed = cert
                self.log(t, "certificate", slot=str(s), block=self.name(bid), speculative=True)
        self.settle(t, period)
        return formed

    def target(self, period: int) -> Block:
        b = self.head.last_in_thread(self.head.blockclique(), 0, lambda x: x.slot <= Slot(period, 0))
        return b if b is not None else self.last_final


def replay_fork_attack(delta_f: int = 4, endorsers: int = 20, threshold: int = 14, beta=Fraction(1, 3),
                       t0_ms: int = 16000, max_periods: int | None = None) -> ReplayResult:
    sc = _Script(delta_f, endorsers, threshold, beta, t0_ms)
    max_periods = max_periods or delta_f + 12
    checks: dict = {}
    g = sc.genesis
    sc.endorse(0, g)
    b_prev = sc.produce(1, g, "b_prev")
    sc.endorse(1, b_prev)

    sc.frame = 1
    b_i = sc.produce(2, b_prev, "b_i")
    sc.endorse(2, b_i)
    sc.log(slot_time(Slot(2, 0), t0_ms, THREADS) + t0_ms // 2, "fitness", branch="b_i", lift=sc.lift.get("b_i"))
    checks["speculative_certificate_adds_one"] = sc.lift.get("b_i") == 1

    sc.frame = 2
    attack = sc.produce(3, b_prev, "attack", by_attacker=True, cert_slots=(Slot(1, 0),))
    t = slot_time(Slot(3, 0), t0_ms, THREADS)
    honest_fit, attack_fit = sc.branch_fitness(b_i.id), sc.branch_fitness(attack.id)
    bc = sc.head.blockclique()
    sc.log(t, "cliques", count=len(sc.head.block_cliques()), honest_fitness=honest_fit, attack_fitness=attack_fit,
           blockclique=",".join(sorted(sc.name(x) for x in bc)))
    checks["fork_is_incompatible"] = "attack" in sc.stale or not sc.head.compatible(b_i.id, attack.id)
    checks["blockclique_holds_honest_branch"] = b_i.id in bc or "b_i" in sc.final

    sc.frame = 3
    live_attack = attack if attack.id in sc.head.blocks else None
    target = sc.target(3)
    sc.log(t + t0_ms // 2, "endorser_choice", target=sc.name(target.id))
    second = sc.endorse(3, target, live_attack)
    checks["honest_endorsers_pick_b_i"] = target.id == b_i.id or "b_i" in sc.final
    checks["second_certificate_on_b_i"] = second is not None and second.endorsed_block == b_i.id
    checks["attack_branch_uncertified"] = not any(c.endorsed_block == attack.id for s, c in sc.certs.items())
    tip = sc.produce(4, b_i, "b_next")
    n_certs = sum(1 for c in tip.certificates if c.endorsed_block == b_i.id)
    checks["next_block_carries_both_certificates"] = n_certs == 2
    period = 4
    while period < max_periods and not ("b_i" in sc.final and "attack" in sc.stale):
        sc.endorse(period, tip)
        period += 1
        tip = sc.produce(period, tip, f"h{period}")
    checks["attack_goes_stale"] = "attack" in sc.stale
    checks["attack_never_final"] = "attack" not in sc.final
    checks["b_i_final"] = "b_i" in sc.final
    sc.log(slot_time(Slot(period, 0), t0_ms, THREADS), "outcome",
           b_i_final_period=sc.final.get("b_i"), attack_stale_period=sc.stale.get("attack"))
    periods = {"b_i_final": sc.final.get("b_i"), "attack_stale": sc.stale.get("attack"),
               "second_certificate": 3 if second is not None else None}
    return ReplayResult(sc.trace, checks, {sc.name(b): b.hex() for b in sc.names}, periods)
