"""Deterministic discrete-event network simulation and scenario reports."""

from __future__ import annotations

import csv
import gc
import hashlib
import heapq
import io
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

from .adversary import Adversary, make_node
from .analysis import lemma1_bound, liveness_parameter
from .config import ScenarioConfig, node_names
from .model import Address, BlockId, KeyRegistry, Slot, Transaction, genesis_blocks, keypair_from_seed, slot_time
from .node import BLOCK, ENDORSEMENT, TAGS, Message, Node
from .params import COIN, Params

log = logging.getLogger(__name__)


class Network:
    """Event queue ordered by (delivery time, seq). Every random draw comes
    from one seeded PRNG consumed in event order, so runs are reproducible."""

    def __init__(self, params: Params, seed: int, delay_base_ms: int = 50, delay_jitter_ms: int = 200,
                 partitions=()) -> None:
        self.params = params
        self.rng = random.Random(f"net/{seed}")
        self.delay_base = delay_base_ms
        self.delay_jitter = delay_jitter_ms
        self.partitions = [(p.start_period * params.t0_ms, p.end_period * params.t0_ms, frozenset(p.side))
                           for p in partitions]
        self.nodes: dict[str, Node] = {}
        self.order: list[str] = []
        self.queue: list = []
        self.seq = 0
        self.now = 0
        self.delivered = 0
        self.dropped = 0
        self.by_tag: Counter = Counter()
        self.observers: list = []

    def add(self, node: Node) -> None:
        node.net = self
        self.nodes[node.name] = node
        self.order.append(node.name)

    def push(self, time: int, kind: str, target: str, a, b=None) -> None:
        self.seq += 1
        heapq.heappush(self.queue, (time, self.seq, kind, target, a, b))

    def delay(self, target: str) -> int:
        if isinstance(self.nodes[target], Adversary):
            return 0  # rushing
        d = self.delay_base + (self.rng.randint(0, self.delay_jitter) if self.delay_jitter else 0)
        return min(d, self.params.delta_max)

    def cut(self, a: str, b: str) -> bool:
        for start, end, side in self.partitions:
            if start <= self.now < end and (a in side) != (b in side):
                return True
        return False

    def send(self, src: Node, target: str, msg: Message) -> None:
        for obs in self.observers:
            obs(src, msg)
        self._send(src.name, target, msg)

    def _send(self, src: str, target: str, msg: Message) -> None:
        if self.cut(src, target):
            self.dropped += 1
            return
        self.push(self.now + self.delay(target), "msg", target, msg, src)

    def broadcast(self, src: Node, msg: Message, exclude: str | None = None) -> None:
        for obs in self.observers:
            obs(src, msg)
        for name in self.order:
            if name != src.name and name != exclude:
                self._send(src.name, name, msg)

    def schedule_ticks(self, last_period: int) -> None:
        """Producers start at period 1; endorsers start at period 0 so that the
        genesis blocks get the certificates their children must carry."""
        p = self.params
        for name in self.order:
            skew = self.nodes[name].skew_ms
            s = Slot(1, 0)
            self.push(slot_time(s, p.t0_ms, p.threads) - skew, "tick", name, "produce", (s, last_period))
            s = Slot(0, 0)
            self.push(p.t0_ms // 2 - skew, "tick", name, "endorse", (s, last_period))

    def step(self) -> None:
        time, _, kind, target, a, b = heapq.heappop(self.queue)
        self.now = time
        node = self.nodes[target]
        if kind == "msg":
            self.delivered += 1
            self.by_tag[a.tag] += 1
            node.deliver(a, b, time)
        else:
            s, last = b
            node.on_tick(a, s, time)
            nxt = Slot(s.period + (s.thread + 1) // self.params.threads, (s.thread + 1) % self.params.threads)
            if nxt.period <= last:
                self.push(time + self.params.stagger_ms, "tick", target, a, (nxt, last))

    def run_until(self, t: int) -> None:
        while self.queue and self.queue[0][0] < t:
            self.step()
        self.now = max(self.now, t)


# -- scenario ---------------------------------------------------------------


class EndorsementLog:
    """Network-wide record of every endorsement and attacker block put on the
    wire, audited slot by slot against the multi-staking bounds."""

    def __init__(self, params: Params, reference: Node, adversary_keys: set[Address], adversary_name: str | None):
        self.params = params
        self.ref = reference
        self.adv_keys = adversary_keys
        self.adv_name = adversary_name
        self.votes: dict[Slot, dict[BlockId, set[int]]] = {}
        self.attacker_blocks: dict[Slot, set[BlockId]] = {}
        self.slots = 0
        self.lemma2_regime = 0
        self.violations = 0
        self.attacker_only = 0
        self.max_certified = 0
        self.certified_total = 0
        self.worst: dict | None = None

    def __call__(self, src: Node, msg: Message) -> None:
        # attacker blocks go out before any endorsement of them, so only
        # slots that already hold one need their votes logged
        if msg.tag == ENDORSEMENT:
            for e in msg.payload:
                if e.slot in self.attacker_blocks and self.ref.draw(e.slot).endorsers[e.index] == e.endorser:
                    self.votes.setdefault(e.slot, {}).setdefault(e.endorsed_block, set()).add(e.index)
        elif msg.tag == BLOCK and src.name == self.adv_name:
            b = msg.payload
            if b.producer in self.adv_keys:
                self.attacker_blocks.setdefault(b.slot, set()).add(b.id)

    def audit_before(self, period: int) -> None:
        for s in sorted(k for k in self.votes.keys() | self.attacker_blocks.keys() if k.period < period):
            votes = self.votes.pop(s, {})
            blocks = self.attacker_blocks.pop(s, set())
            drawn = self.ref.draw(s).endorsers
            a = sum(1 for x in drawn if x in self.adv_keys)
            n = len(drawn) - a
            k = self.params.threshold - a
            certified = [bid for bid in blocks if len(votes.get(bid, ())) >= self.params.threshold]
            self.certified_total += len(certified)
            if not blocks:
                continue
            self.slots += 1
            if k <= 0:
                self.lemma2_regime += 1
                continue
            for bid in blocks:
                idx = votes.get(bid, set())
                if sum(1 for i in idx if drawn[i] in self.adv_keys) >= self.params.threshold:
                    self.attacker_only += 1
            bound = lemma1_bound(n, k)
            if len(certified) > self.max_certified:
                self.max_certified = len(certified)
                self.worst = {"slot": list(s), "certified": len(certified), "bound": bound, "n": n, "k": k}
            if len(certified) > bound:
                self.violations += 1

    def summary(self) -> dict:
        return {
            "slots_audited": self.slots,
            "lemma2_regime_slots": self.lemma2_regime,
            "max_certified_attacker_blocks": self.max_certified,
            "certified_attacker_blocks": self.certified_total,
            "violations": self.violations,
            "attacker_only_certificates": self.attacker_only,
            "worst": self.worst,
        }


@dataclass
class World:
    cfg: ScenarioConfig
    params: Params
    net: Network
    honest: list[Node]
    adversary: Node | None
    keys: dict[str, list] = field(default_factory=dict)
    genesis_supply: int = 0


def stake_split(cfg: ScenarioConfig) -> tuple[list[int], list[int]]:
    """Integer stakes (honest keys, adversary keys) with the adversary's exact share."""
    total = cfg.total_coins * COIN
    adv_total = int(Fraction(cfg.stake_share) * total) if cfg.strategy != "honest" else 0
    n_h = cfg.honest_nodes * cfg.keys_per_node
    hon_total = total - adv_total
    honest = [hon_total // n_h + (1 if i < hon_total % n_h else 0) for i in range(n_h)]
    n_a = cfg.adversary_keys if adv_total else 0
    adv = [adv_total // n_a + (1 if i < adv_total % n_a else 0) for i in range(n_a)] if n_a else []
    return honest, adv


def build_world(cfg: ScenarioConfig) -> World:
    params = cfg.params
    registry = KeyRegistry()
    genesis = genesis_blocks(params.threads)
    hon_stakes, adv_stakes = stake_split(cfg)
    honest_keys = [[keypair_from_seed(f"{cfg.seed}/honest/{n}/{k}") for k in range(cfg.keys_per_node)]
                   for n in range(cfg.honest_nodes)]
    adv_keys = [keypair_from_seed(f"{cfg.seed}/adversary/{k}") for k in range(len(adv_stakes))]
    stakes: dict[Address, int] = {}
    flat = [kp for ks in honest_keys for kp in ks]
    for kp, st in zip(flat, hon_stakes):
        stakes[kp.address] = st
    for kp, st in zip(adv_keys, adv_stakes):
        stakes[kp.address] = st
    for kp in flat + adv_keys:
        registry.register(kp)
    balances = {kp.address: cfg.balance_coins * COIN for kp in flat + adv_keys}
    net = Network(params, cfg.seed, cfg.delay_base_ms, cfg.delay_jitter_ms, cfg.partitions)
    skew_rng = random.Random(f"skew/{cfg.seed}")
    half = params.clock_skew_ms // 2
    honest = []
    for name, ks in zip(node_names(cfg), honest_keys):
        node = Node(name, ks, params, registry, genesis, stakes, balances,
                    skew_ms=skew_rng.randint(-half, half))
        net.add(node)
        honest.append(node)
    adversary = None
    if cfg.strategy != "honest":
        adversary = make_node(cfg.strategy, "adv", adv_keys, params, registry, genesis, stakes, balances,
                              skew_ms=0, m=cfg.m, depth=cfg.depth,
                              quiet_after_ms=cfg.quiet_period * params.t0_ms)
        net.add(adversary)
    w = World(cfg, params, net, honest, adversary, {"honest": flat, "adversary": adv_keys})
    w.genesis_supply = sum(balances.values()) + sum(stakes.values())
    return w


@dataclass
class ScenarioReport:
    data: dict
    series: list[dict]
    ledger: dict

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"

    def series_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["period", "liveness", "cliqueCount", "messages", "verifications"]
        w.writerow(cols)
        for row in self.series:
            w.writerow([row[c] for c in cols])
        return buf.getvalue()

    def ledger_json(self) -> str:
        return json.dumps(self.ledger, sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        h = hashlib.sha256()
        for part in (self.to_json(), self.series_csv(), self.ledger_json()):
            h.update(part.encode())
        return h.hexdigest()

    @property
    def liveness(self) -> float:
        return self.data["liveness"]


def inject_transactions(world: World, period: int, rng: random.Random) -> None:
    cfg = world.cfg
    keys = world.keys["honest"]
    if not keys:
        return
    for j in range(cfg.tx_per_period):
        sender = keys[rng.randrange(len(keys))]
        receiver = keys[rng.randrange(len(keys))]
        amount = rng.randint(1, cfg.tx_max_amount_coins) * COIN
        tx = Transaction.create(sender, receiver.address, amount, cfg.tx_fee_units, period * 10_000 + j)
        for node in world.honest:
            node.submit(tx)


def prefix_digest(node: Node, below_period: int | None = None) -> str:
    h = hashlib.sha256()
    for s in sorted(node.final_slots):
        if below_period is None or s.period < below_period:
            h.update(bytes(str(s), "ascii") + node.final_slots[s])
    return h.hexdigest()


def conservation_audit(world: World) -> dict:
    p = world.params
    blocks = violations = 0
    minted = burned = 0
    for node in world.honest:
        for ex in node.ledger.history:
            blocks += 1
            expected = p.block_reward + ex.endorsements * p.endorsement_reward - ex.burned
            if ex.supply_delta != expected or ex.supply_delta != ex.minted - ex.burned:
                violations += 1
        total = sum(ex.supply_delta for ex in node.ledger.history)
        if node.ledger.supply() != world.genesis_supply + total:
            violations += 1
    ref = world.honest[0].ledger.history
    minted = sum(ex.minted for ex in ref)
    burned = sum(ex.burned for ex in ref)
    return {"blocks_audited": blocks, "violations": violations, "minted": minted, "burned": burned,
            "slashed": sum(ex.slashed for ex in ref)}


def safety_audit(world: World, converge_after: int) -> dict:
    nodes = world.honest
    conflicts = 0
    slots: dict[Slot, BlockId] = {}
    for node in nodes:
        for s, bid in node.final_slots.items():
            if slots.setdefault(s, bid) != bid:
                conflicts += 1
    common = min(n.frontier() for n in nodes)
    digests = {prefix_digest(n, common) for n in nodes}
    violations = Counter()
    for n in nodes:
        violations.update(n.violations)
    return {
        "conflicting_final_slots": conflicts,
        "ancestor_closed": violations["final-not-ancestor-closed"] == 0,
        "final_then_stale": violations["final-then-stale"],
        "common_final_period": common,
        "identical_prefix": len(digests) == 1,
        "converged": len(digests) == 1 and common >= converge_after and conflicts == 0,
        "converge_after_period": converge_after,
    }


def flooding_audit(world: World) -> dict:
    worst_excess = 0
    over = 0
    for node in world.honest:
        for s, n in node.rebroadcast_by_slot.items():
            excess = n - 1 - node.requested_by_slot.get(s, 0)
            worst_excess = max(worst_excess, excess)
            over += excess > 0
    return {
        "max_rebroadcast_excess": worst_excess,
        "slots_over_limit": over,
        "honest_verifications": sum(n.verifier.count for n in world.honest),
        "blocks_accepted": sum(n.metrics["blocks.accepted"] for n in world.honest),
    }


def denunciation_tally(world: World) -> dict:
    out = {}
    for n in world.honest:
        out[n.name] = {
            "block": n.metrics["blocks.denounced"],
            "endorsement": n.metrics["endorsements.denounced"],
            "punished": len(n.ledger.punished),
        }
    return out


def attack_audit(world: World) -> dict:
    """Fate of the blocks a fork attacker built on outdated parents."""
    adv = world.adversary
    attacks = getattr(adv, "attacks", None)
    if not attacks:
        return {"fork_blocks": 0, "finalized_by_honest": 0}
    ids = set(attacks.values())
    return {"fork_blocks": len(ids),
            "finalized_by_honest": len(ids & set().union(*(n.final_ids for n in world.honest)))}


def run_scenario(cfg: ScenarioConfig, periods: int | None = None) -> ScenarioReport:
    # the run keeps a large, mostly acyclic heap alive; frequent full
    # collections over it cost more than the garbage they find
    saved = gc.get_threshold()
    gc.set_threshold(50_000, 20, 100)
    try:
        return _run_scenario(cfg, periods)
    finally:
        gc.set_threshold(*saved)


def _run_scenario(cfg: ScenarioConfig, periods: int | None) -> ScenarioReport:
    if periods is not None:
        cfg = cfg.with_(periods=periods)
    world = build_world(cfg)
    net, params = world.net, world.params
    P, D = cfg.periods, cfg.drain
    last = P + D
    ref = world.honest[0]
    adv_keys = {kp.address for kp in world.keys["adversary"]}
    elog = EndorsementLog(params, ref, adv_keys, world.adversary.name if world.adversary else None)
    net.observers.append(elog)
    net.schedule_ticks(last)
    tx_rng = random.Random(f"tx/{cfg.seed}")
    series = []
    prev_msgs = prev_ver = 0
    max_cliques = 0
    net.run_until(params.t0_ms)
    for period in range(1, last + 1):
        if period <= P:
            inject_transactions(world, period, tx_rng)
        net.run_until((period + 1) * params.t0_ms)
        cliques = len(ref.head.block_cliques())
        max_cliques = max(max_cliques, cliques)
        ver = sum(n.verifier.count for n in world.honest)
        series.append({"period": period, "cliqueCount": cliques, "messages": net.delivered - prev_msgs,
                       "verifications": ver - prev_ver})
        prev_msgs, prev_ver = net.delivered, ver
        elog.audit_before(period - 1)
    elog.audit_before(last + 1)

    per_period = Counter(s.period for s in ref.final_slots if s.period >= 1)
    for row in series:
        row["liveness"] = round(per_period.get(row["period"], 0) / params.threads, 4)

    def liveness_of(node: Node) -> float:
        n = sum(1 for s in node.final_slots if 1 <= s.period <= P)
        return n / (P * params.threads)

    converge_after = max([cfg.quiet_period if world.adversary else 1]
                         + [p.end_period for p in cfg.partitions])
    data = {
        "scenario": cfg.name,
        "seed": cfg.seed,
        "strategy": cfg.strategy,
        "stake_share": str(cfg.stake_share),
        "periods": P,
        "drain_periods": D,
        "params": {"threads": params.threads, "t0_ms": params.t0_ms, "endorsers": params.endorsers,
                   "threshold": params.threshold, "delta_f": params.delta_f,
                   "delta_max_ms": params.delta_max, "cert_window_ms": params.cert_window},
        "liveness": round(liveness_of(ref), 6),
        "liveness_per_node": {n.name: round(liveness_of(n), 6) for n in world.honest},
        "analytic_liveness": float(liveness_parameter(params.endorsers, params.threshold, cfg.stake_share))
        if cfg.strategy == "withholder" else None,
        "final_prefix": {n.name: {"count": len(n.final_slots), "digest": prefix_digest(n)} for n in world.honest},
        "safety": safety_audit(world, converge_after),
        "conservation": conservation_audit(world),
        "lemma": elog.summary(),
        "flooding": flooding_audit(world),
        "denunciations": denunciation_tally(world),
        "max_clique_count": max_cliques,
        "messages": {"delivered": net.delivered, "dropped": net.dropped, "by_tag": {t: net.by_tag[t] for t in TAGS}},
        "metrics": {n.name: dict(sorted(n.metrics.items())) for n in net.nodes.values()},
        "verifications": {n.name: n.verifier.count for n in net.nodes.values()},
        "partitions": [[p.start_period, p.end_period, list(p.side)] for p in cfg.partitions],
        "attack": attack_audit(world),
    }
    ledger = {a.hex(): list(v) for a, v in ref.ledger.read().items()}
    return ScenarioReport(data, series, ledger)


def partition_heal_check(report: ScenarioReport | dict, window: int = 0) -> bool:
    """True iff all honest finalized prefixes agree and finality moved past the
    last partition interval (plus ``window`` periods)."""
    data = report.data if isinstance(report, ScenarioReport) else report
    safety = data["safety"]
    heal = max([p[1] for p in data.get("partitions", [])] + [0]) + window
    return bool(safety["identical_prefix"] and safety["conflicting_final_slots"] == 0
                and safety["common_final_period"] >= heal)
