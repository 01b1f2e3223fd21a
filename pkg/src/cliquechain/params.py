from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .model import ConfigError, check_threads

COIN = 10**9


@dataclass(frozen=True)
class Params:
    """Protocol constants shared by every node of a run.

    Times are integer milliseconds, amounts integer smallest coin units.
    """

    threads: int = 32
    t0_ms: int = 16000
    endorsers: int = 96
    threshold: int = 64
    delta_f: int = 64
    seed: bytes = b"\x00" * 32
    max_block_bits: int = 1_000_000
    clock_skew_ms: int = 100
    delta_max_ms: int | None = None  # None -> t0/2
    epoch_periods: int = 128
    clique_cap: int = 1024
    request_expiry_ms: int | None = None  # None -> 8*t0
    cert_window_ms: int | None = None  # None -> t0/2 + delta_max
    block_reward: int = 30 * COIN
    endorsement_reward: int = 3 * COIN // 10
    penalty: int = 100 * COIN
    initial_deposit: int = 100 * COIN

    def __post_init__(self) -> None:
        check_threads(self.threads)
        if self.t0_ms <= 0 or self.t0_ms % self.threads:
            raise ConfigError(f"t0_ms={self.t0_ms} must be positive and divisible by threads={self.threads}")
        if self.t0_ms % 2:
            raise ConfigError("t0_ms must be even")
        if not 1 <= self.threshold <= self.endorsers:
            raise ConfigError(f"threshold={self.threshold} must lie in [1, endorsers={self.endorsers}]")
        if self.endorsers > 0xFFFF:
            raise ConfigError("endorsers must fit in 16 bits")
        if self.delta_f < 0:
            raise ConfigError("delta_f must be non-negative")
        if self.endorsement_reward % 3:
            raise ConfigError("endorsement_reward must split evenly in thirds")
        if len(self.seed) != 32:
            raise ConfigError("seed must be 32 bytes")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and not isinstance(v, bool) and v < 0:
                raise ConfigError(f"{f.name} must be non-negative")

    @property
    def stagger_ms(self) -> int:
        return self.t0_ms // self.threads

    @property
    def delta_max(self) -> int:
        return self.t0_ms // 2 if self.delta_max_ms is None else self.delta_max_ms

    @property
    def request_expiry(self) -> int:
        return 8 * self.t0_ms if self.request_expiry_ms is None else self.request_expiry_ms

    @property
    def cert_window(self) -> int:
        """How long after its slot start a block may still collect its own-slot certificate."""
        if self.cert_window_ms is not None:
            return self.cert_window_ms
        return self.t0_ms // 2 + self.delta_max

    def with_(self, **kw) -> "Params":
        return replace(self, **kw)
