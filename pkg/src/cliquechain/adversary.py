"""Byzantine strategies. Adversaries are rushing (messages reach them with no
delay) and never relay other nodes' traffic."""

from __future__ import annotations

from .model import Block, BlockId, Endorsement, Keypair, Slot, Transaction, digest, keypair_in_shard
from .node import BLOCK, CERTIFICATE, ENDORSEMENT, Message, Node
from .validity import build_cert

STRATEGIES = ("honest", "withholder", "multi_staker", "flooder", "fork_attacker", "equivocating_endorser")


class Adversary(Node):
    relay = False
    strategy = "honest"

    def __init__(self, *args, quiet_after_ms: int | None = None, **kw) -> None:
        super().__init__(*args, **kw)
        self.quiet_after_ms = quiet_after_ms

    def active(self) -> bool:
        return self.quiet_after_ms is None or self.now < self.quiet_after_ms


class Withholder(Adversary):
    """Never publishes a block or an endorsement."""

    strategy = "withholder"

    def on_tick(self, kind, s, now):
        self.now = now

    def deliver(self, msg, sender, now):
        self.now = now


class MultiStaker(Adversary):
    """Signs ``m`` distinct versions of every block it is drawn to produce and
    endorses each of them with all of its indices. Versions go out in a
    different order to each peer so that honest first-in views diverge."""

    strategy = "multi_staker"

    def __init__(self, *args, m: int = 2, **kw) -> None:
        super().__init__(*args, **kw)
        self.m = m
        self.versions: dict[Slot, list[Block]] = {}
        self.pool: dict[Slot, dict[BlockId, dict[int, Endorsement]]] = {}
        self.sent_certs: set[tuple[Slot, BlockId]] = set()
        self._salt_keys: dict[int, Keypair] = {}

    def salt_key(self, thread: int) -> Keypair:
        kp = self._salt_keys.get(thread)
        if kp is None:
            kp = keypair_in_shard(f"salt/{self.name}", thread, self.params.threads)
            self.registry.register(kp)
            self._salt_keys[thread] = kp
        return kp

    def produce(self, s: Slot) -> None:
        if not self.active():
            return super().produce(s)
        kp = self.salt_key(s.thread)
        salts = [Transaction.create(kp, kp.address, 0, 0, s.period * 1_000_003 + v) for v in range(self.m)]
        base = self.produce_block(s, extra_ops=(salts[0],))
        if base is None:
            return
        # same parents and certificates, only the salt differs
        producer = self.keys[base.producer]
        ops = base.operations[:-1]
        versions = [base] + [Block.create(producer, s, base.parents, base.certificates, ops + (salt,))
                             for salt in salts[1:]]
        self.versions[s] = versions
        self.handle_block(versions[0], self.name)
        self.metrics["attack.versions"] += len(versions)
        peers = [n for n in self.net.order if n != self.name]
        for j, peer in enumerate(peers):
            rot = j % len(versions)
            for b in versions[rot:] + versions[:rot]:
                self.send(peer, Message(BLOCK, b))
        self.endorse_versions(s, versions)

    def endorse_versions(self, s: Slot, versions: list[Block]) -> None:
        mine = self.own_indices(s)
        if not mine:
            return
        pool = self.pool.setdefault(s, {})
        batch = []
        for b in versions:
            for i, kp in mine:
                e = Endorsement.create(kp, s, i, b.id)
                pool.setdefault(b.id, {})[e.index] = e
                batch.append(e)
        self.endorsed.update((s, i) for i, _ in mine)
        peers = [n for n in self.net.order if n != self.name]
        for j, peer in enumerate(peers):
            # each peer sees its own first version's votes first
            rot = (j % len(versions)) * len(mine)
            self.send(peer, Message(ENDORSEMENT, tuple(batch[rot:] + batch[:rot])))
        self.extra_endorsements(s, versions)

    def extra_endorsements(self, s: Slot, versions: list[Block]) -> None:
        pass

    def deliver(self, msg, sender, now):
        super().deliver(msg, sender, now)
        if msg.tag == ENDORSEMENT and self.active():
            self.observe(msg.payload)

    def observe(self, batch) -> None:
        """Rushing certificate assembly for own versions from honest endorsements."""
        touched = set()
        for e in batch:
            if e.slot in self.versions and e.endorser not in self.keys:
                self.pool.setdefault(e.slot, {}).setdefault(e.endorsed_block, {}).setdefault(e.index, e)
                touched.add((e.slot, e.endorsed_block))
        for s, bid in sorted(touched):
            if (s, bid) in self.sent_certs:
                continue
            cert = build_cert(self.pool[s][bid].values(), self.params.threshold, bid)
            if cert is not None:
                self.sent_certs.add((s, bid))
                self.metrics["attack.certificates"] += 1
                self.broadcast(Message(CERTIFICATE, cert))

    def _known_block(self, bid):
        b = super()._known_block(bid)
        if b is None:
            for vs in self.versions.values():
                for v in vs:
                    if v.id == bid:
                        return v
        return b

    def prune_before(self, period: int) -> None:
        super().prune_before(period)
        for d in (self.versions, self.pool):
            for s in [s for s in d if s.period < period]:
                del d[s]


class Flooder(MultiStaker):
    """Multi-staker that also sprays ``m * E`` endorsements at indices it was
    not drawn for; they carry valid signatures but fail the committee check."""

    strategy = "flooder"

    def extra_endorsements(self, s: Slot, versions: list[Block]) -> None:
        drawn = self.draw(s).endorsers
        kp = next(iter(self.keys.values()))
        fake = []
        for b in versions:
            for i in range(self.params.endorsers):
                if drawn[i] != kp.address:
                    fake.append(Endorsement.create(kp, s, i, b.id))
        self.metrics["attack.fake_endorsements"] += len(fake)
        if fake:
            self.broadcast(Message(ENDORSEMENT, tuple(fake)))


class ForkAttacker(Adversary):
    """When drawn as producer, builds on a thread parent ``depth`` blocks behind
    the newest certified one, reusing that older block's certificate, and
    endorses its own attack block with every index it holds."""

    strategy = "fork_attacker"

    def __init__(self, *args, depth: int = 1, **kw) -> None:
        super().__init__(*args, **kw)
        self.depth = depth
        self.attacks: dict[Slot, BlockId] = {}

    def produce(self, s: Slot) -> None:
        if not self.active():
            return super().produce(s)
        latest = self.head.last_in_thread(self.head.blockclique(), s.thread,
                                          lambda b: b.slot < s and self.certified(b))
        if latest is None:
            latest = self.last_final[s.thread]
        old = latest
        for _ in range(self.depth):
            tp = old.thread_parent()
            if tp is None:
                break
            prev = self.head.get(tp.id)
            if prev is None:
                break
            old = prev
        b = None
        if old.id != latest.id:
            b = self.produce_block(s, forced={s.thread: old})
        if b is None:
            return super().produce(s)
        self.attacks[s] = b.id
        self.metrics["attack.fork_blocks"] += 1
        self.handle_block(b, self.name)

    def endorsement_target(self, s: Slot) -> Block:
        bid = self.attacks.get(s)
        if bid is not None and bid in self.head.blocks:
            return self.head.blocks[bid]
        return super().endorsement_target(s)


class EquivocatingEndorser(Adversary):
    """Signs two endorsements per drawn index and shows each half of the
    network a different one."""

    strategy = "equivocating_endorser"

    def endorse_slot(self, s: Slot) -> None:
        if not self.active():
            return super().endorse_slot(s)
        mine = [(i, kp) for i, kp in self.own_indices(s) if (s, i) not in self.endorsed]
        if not mine:
            return
        target = self.endorsement_target(s)
        tp = target.thread_parent()
        other = tp.id if tp is not None else digest(b"decoy", target.id)
        a = tuple(Endorsement.create(kp, s, i, target.id) for i, kp in mine)
        b = tuple(Endorsement.create(kp, s, i, other) for i, kp in mine)
        for i, _ in mine:
            self.endorsed.add((s, i))
        self.handle_endorsements(a, self.name + "/local")
        peers = [n for n in self.net.order if n != self.name]
        for j, peer in enumerate(peers):
            self.send(peer, Message(ENDORSEMENT, a if j % 2 == 0 else b))
        self.metrics["attack.equivocations"] += len(mine)

    # endorse at mid-period only, so that the split is always applied
    endorse_on_arrival = False


def make_node(strategy: str, *args, m: int = 2, depth: int = 1, quiet_after_ms: int | None = None, **kw) -> Node:
    if strategy == "honest":
        return Node(*args, **kw)
    kw["quiet_after_ms"] = quiet_after_ms
    if strategy in ("multi_staker", "flooder"):
        kw["m"] = m
    elif strategy == "fork_attacker":
        kw["depth"] = depth
    cls = {c.strategy: c for c in (Withholder, MultiStaker, Flooder, ForkAttacker, EquivocatingEndorser)}.get(strategy)
    if cls is None:
        raise ValueError(f"unknown adversary strategy {strategy!r}")
    return cls(*args, **kw)
