"""Scenario configuration: TOML files checked against a JSON schema."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema
import tomli

from .model import ConfigError, digest
from .params import COIN, Params

_INT = {"type": "integer", "minimum": 0}
_POS = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "periods"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": _INT,
        "periods": _POS,
        "drain_periods": _INT,
        "protocol": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "threads": _POS, "t0_ms": _POS, "endorsers": _POS, "threshold": _POS,
                "delta_f": _INT, "epoch_periods": _POS, "clique_cap": _POS,
                "clock_skew_ms": _INT, "delta_max_ms": _INT, "cert_window_ms": _INT,
                "request_expiry_ms": _INT, "max_block_bits": _POS,
            },
        },
        "network": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delay_base_ms": _INT,
                "delay_jitter_ms": _INT,
                "partitions": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["start_period", "end_period", "side"],
                        "properties": {
                            "start_period": _INT,
                            "end_period": _INT,
                            "side": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                        },
                    },
                },
            },
        },
        "honest": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"nodes": _POS, "keys_per_node": _POS},
        },
        "adversary": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "strategy": {"enum": ["honest", "withholder", "multi_staker", "flooder",
                                      "fork_attacker", "equivocating_endorser"]},
                "stake_share": {"type": ["string", "number"]},
                "keys": _POS,
                "m": _POS,
                "depth": _POS,
                "quiet_after_period": _INT,
            },
        },
        "stake": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"total_coins": _POS, "balance_coins": _INT},
        },
        "transactions": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"per_period": _INT, "max_amount_coins": _POS, "fee_units": _INT},
        },
    },
}


@dataclass(frozen=True)
class Partition:
    start_period: int
    end_period: int
    side: tuple[str, ...]


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    periods: int
    seed: int = 0
    description: str = ""
    drain_periods: int | None = None
    protocol: dict = field(default_factory=dict)
    delay_base_ms: int = 50
    delay_jitter_ms: int = 200
    partitions: tuple[Partition, ...] = ()
    honest_nodes: int = 4
    keys_per_node: int = 1
    strategy: str = "honest"
    stake_share: Fraction = Fraction(0)
    adversary_keys: int = 1
    m: int = 2
    depth: int = 1
    quiet_after_period: int | None = None
    total_coins: int = 3000
    balance_coins: int = 1000
    tx_per_period: int = 2
    tx_max_amount_coins: int = 5
    tx_fee_units: int = 1000

    @property
    def params(self) -> Params:
        return Params(seed=digest(b"scenario-seed", str(self.seed).encode()), **self.protocol)

    @property
    def drain(self) -> int:
        if self.drain_periods is not None:
            return self.drain_periods
        p = self.params
        return p.delta_f // p.threads + 8

    @property
    def quiet_period(self) -> int:
        return self.periods if self.quiet_after_period is None else self.quiet_after_period

    def with_(self, **kw) -> "ScenarioConfig":
        proto = kw.pop("protocol", None)
        cfg = dataclasses.replace(self, **kw)
        if proto:
            cfg = dataclasses.replace(cfg, protocol={**self.protocol, **proto})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.params  # raises ConfigError on bad protocol constants
        if not 0 <= self.stake_share < 1:
            raise ConfigError(f"adversary.stake_share must lie in [0, 1), got {self.stake_share}")
        if self.strategy != "honest" and self.stake_share == 0:
            raise ConfigError("adversary.stake_share must be positive for a Byzantine strategy")
        names = set(node_names(self))
        for part in self.partitions:
            unknown = set(part.side) - names
            if unknown:
                raise ConfigError(f"network.partitions.side: unknown node(s) {sorted(unknown)}")
            if part.end_period < part.start_period:
                raise ConfigError("network.partitions: end_period before start_period")


def node_names(cfg: ScenarioConfig) -> list[str]:
    names = [f"h{i}" for i in range(cfg.honest_nodes)]
    if cfg.strategy != "honest":
        names.append("adv")
    return names


def parse_share(v) -> Fraction:
    try:
        return Fraction(v) if isinstance(v, str) else Fraction(v).limit_denominator(10**6)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"adversary.stake_share: cannot parse {v!r}") from exc


def _key_path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def from_dict(d: dict) -> ScenarioConfig:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(d), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise ConfigError(f"{_key_path(e)}: {e.message}")
    net = d.get("network", {})
    hon = d.get("honest", {})
    adv = d.get("adversary", {})
    stake = d.get("stake", {})
    txs = d.get("transactions", {})
    cfg = ScenarioConfig(
        name=d["name"],
        periods=d["periods"],
        seed=d.get("seed", 0),
        description=d.get("description", ""),
        drain_periods=d.get("drain_periods"),
        protocol=dict(d.get("protocol", {})),
        delay_base_ms=net.get("delay_base_ms", 50),
        delay_jitter_ms=net.get("delay_jitter_ms", 200),
        partitions=tuple(Partition(p["start_period"], p["end_period"], tuple(p["side"]))
                         for p in net.get("partitions", [])),
        honest_nodes=hon.get("nodes", 4),
        keys_per_node=hon.get("keys_per_node", 1),
        strategy=adv.get("strategy", "honest"),
        stake_share=parse_share(adv.get("stake_share", 0)),
        adversary_keys=adv.get("keys", 1),
        m=adv.get("m", 2),
        depth=adv.get("depth", 1),
        quiet_after_period=adv.get("quiet_after_period"),
        total_coins=stake.get("total_coins", 3000),
        balance_coins=stake.get("balance_coins", 1000),
        tx_per_period=txs.get("per_period", 2),
        tx_max_amount_coins=txs.get("max_amount_coins", 5),
        tx_fee_units=txs.get("fee_units", 1000),
    )
    cfg.validate()
    return cfg


def load(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        with path.open("rb") as f:
            d = tomli.load(f)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(d)


def bundled() -> list[str]:
    files = resources.files("cliquechain") / "scenarios"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".toml"))


def load_bundled(name: str) -> ScenarioConfig:
    f = resources.files("cliquechain") / "scenarios" / f"{name}.toml"
    if not f.is_file():
        raise ConfigError(f"no bundled scenario named {name!r}; have {bundled()}")
    return from_dict(tomli.loads(f.read_text()))


def resolve(spec: str) -> ScenarioConfig:
    """A file path, or the name of a bundled scenario."""
    p = Path(spec)
    if p.suffix == ".toml" or p.exists():
        return load(p)
    return load_bundled(spec)


def coins(n: int) -> int:
    return n * COIN
