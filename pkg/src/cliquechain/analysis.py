"""Exact committee probabilities, the safety grid, liveness and Lemma bounds.

All probabilities are ``fractions.Fraction``; floats appear only at output.
"""

from __future__ import annotations

import csv
import io
import math
from fractions import Fraction
from itertools import product
from typing import Iterable, NamedTuple

import numpy as np

SECONDS_PER_YEAR = Fraction(8766 * 3600)  # 365.25 days


def _check(E: int, k: int, beta: Fraction) -> Fraction:
    beta = Fraction(beta)
    if E < 0 or not 0 <= beta <= 1:
        raise ValueError(f"need E >= 0 and 0 <= beta <= 1, got E={E}, beta={beta}")
    return beta


def _mass(E: int, lo: int, hi: int, beta: Fraction) -> Fraction:
    # integer numerators over the common denominator den**E
    a, den = beta.numerator, beta.denominator
    b = den - a
    num = sum(math.comb(E, j) * a**j * b ** (E - j) for j in range(lo, hi + 1))
    return Fraction(num, den**E)


def binom_tail(E: int, k: int, beta) -> Fraction:
    """P(X >= k) for X ~ Binomial(E, beta), exactly."""
    beta = _check(E, k, beta)
    if k > E:
        return Fraction(0)
    return _mass(E, max(k, 0), E, beta)


def binom_cdf(E: int, k: int, beta) -> Fraction:
    """P(X <= k) for X ~ Binomial(E, beta), exactly."""
    beta = _check(E, k, beta)
    if k < 0:
        return Fraction(0)
    return _mass(E, 0, min(k, E), beta)


def threshold_for(E: int, Q) -> int:
    """Index count an attacker needs to hold at least a Q fraction of E."""
    return math.ceil(Fraction(Q) * E)


def years_between(p: Fraction, slots_per_second) -> float:
    """Expected years between capture slots; 0 when p == 1, inf when p == 0."""
    if p == 0:
        return math.inf
    return float(1 / (p * Fraction(slots_per_second) * SECONDS_PER_YEAR))


# security levels of the heatmap, by expected years between events
BANDS = ((10**4, ">=1e4y"), (10**3, "1e3y"), (10**2, "1e2y"), (10, "10y"), (1, "1y"), (0, "<1y"))


def band(years: float) -> str:
    for lo, name in BANDS:
        if years >= lo:
            return name
    return BANDS[-1][1]


class GridCell(NamedTuple):
    E: int
    Q: Fraction
    beta: Fraction
    probability: Fraction
    years_between_events: float
    band: str


def safety_grid(E_values: Iterable[int], Q_values: Iterable, beta=Fraction(1, 3),
                slots_per_second=2) -> list[GridCell]:
    """P(attacker holds >= ceil(Q*E) indices) per (E, Q) cell."""
    beta = Fraction(beta)
    out = []
    for E, Q in product(E_values, Q_values):
        Q = Fraction(Q)
        p = binom_tail(E, threshold_for(E, Q), beta)
        y = years_between(p, slots_per_second)
        out.append(GridCell(E, Q, beta, p, y, band(y)))
    return out


def default_Q_steps(n: int = 21) -> list[Fraction]:
    return [Fraction(i, n - 1) for i in range(n)]


def grid_csv(cells: Iterable[GridCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["E", "Q", "beta", "probability", "years_between_events", "band"])
    for c in cells:
        w.writerow([c.E, f"{float(c.Q):.6f}", f"{float(c.beta):.6f}", f"{float(c.probability):.6e}",
                    f"{c.years_between_events:.6e}", c.band])
    return buf.getvalue()


def monte_carlo_tail(E: int, k: int, beta: float, samples: int, rng: np.random.Generator) -> float:
    return float(np.mean(rng.binomial(E, float(beta), size=samples) >= k))


def liveness_parameter(E: int, threshold: int, beta) -> Fraction:
    """1 - P(producer captured or more than E - threshold indices withheld),
    the two events taken as independent."""
    beta = Fraction(beta)
    p1 = beta
    p2 = binom_tail(E, E - threshold + 1, beta)
    return 1 - (p1 + p2 - p1 * p2)


def lemma1_bound(n: int, k: int) -> int:
    """Cap on blocks reaching the threshold in one slot when the attacker
    holds ``threshold - k`` indices and ``n`` indices are honest."""
    if k <= 0:
        raise ValueError("k must be positive: the attacker reaches the threshold alone")
    if n < 0:
        raise ValueError("n must be non-negative")
    return (n + 2 * k) // k


def max_certified_blocks(n: int, attacker: int, threshold: int) -> int:
    """Exhaustive optimum over allocations of ``n`` single-vote honest indices
    to blocks, the attacker endorsing every block with all its indices."""
    need = threshold - attacker
    if need <= 0:
        raise ValueError("attacker reaches the threshold alone")
    best = 0

    # partitions of n into parts, counting parts >= need
    def walk(left: int, largest: int, certified: int) -> None:
        nonlocal best
        best = max(best, certified)
        for part in range(min(left, largest), 0, -1):
            walk(left - part, part, certified + (part >= need))

    walk(n, n, 0)
    return best
