"""Counters and inequality tests.

Outcomes are tallied into the eight counters N_d(E) / N_d(U) (equal and
unequal outcomes at configuration d).  Counts stay integers; division only
happens when a correlation value is formed.

Correlations use the equal-outcome convention E_d = 2 N_d(E)/N_d - 1, so a
perfectly anti-correlated configuration has E = -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .core import PairRecord


class InsufficientSamples(ValueError):
    """A statistic needs a configuration that received no pairs."""


@dataclass(frozen=True)
class Tally:
    total: tuple[int, int, int, int] = (0, 0, 0, 0)
    equal: tuple[int, int, int, int] = (0, 0, 0, 0)

    def __post_init__(self) -> None:
        if len(self.total) != 4 or len(self.equal) != 4:
            raise ValueError("a tally has exactly four configurations")
        for t, e in zip(self.total, self.equal):
            if not 0 <= e <= t:
                raise ValueError(f"equal count {e} outside [0, {t}]")

    @property
    def unequal(self) -> tuple[int, int, int, int]:
        return tuple(t - e for t, e in zip(self.total, self.equal))  # type: ignore[return-value]

    @property
    def n(self) -> int:
        return sum(self.total)

    def __add__(self, other: "Tally") -> "Tally":
        return Tally(
            tuple(x + y for x, y in zip(self.total, other.total)),  # type: ignore[arg-type]
            tuple(x + y for x, y in zip(self.equal, other.equal)),  # type: ignore[arg-type]
        )

    def to_dict(self) -> dict:
        return {"total": list(self.total), "equal": list(self.equal), "unequal": list(self.unequal)}


def tally(records: Iterable[PairRecord]) -> Tally:
    total = [0, 0, 0, 0]
    equal = [0, 0, 0, 0]
    for rec in records:
        d = rec.setting.d
        total[d] += 1
        equal[d] += rec.A == rec.B
    return Tally(tuple(total), tuple(equal))  # type: ignore[arg-type]


def tally_arrays(a: np.ndarray, b: np.ndarray, alice: np.ndarray, bob: np.ndarray) -> Tally:
    d = np.abs(b.astype(np.int16) - a)
    total = np.bincount(d, minlength=4)
    equal = np.bincount(d[alice == bob], minlength=4)
    return Tally(tuple(int(x) for x in total), tuple(int(x) for x in equal))  # type: ignore[arg-type]


@dataclass(frozen=True)
class BellResult:
    n1u: int
    n2e: int
    n3u: int

    @property
    def violated(self) -> bool:
        return self.n1u > self.n2e + self.n3u

    def to_dict(self) -> dict:
        return {"n1u": self.n1u, "n2e": self.n2e, "n3u": self.n3u, "violated": self.violated}


def bell_test(t: Tally) -> BellResult:
    """N1(U) <= N2(E) + N3(U); equality counts as obeyed."""
    return BellResult(t.unequal[1], t.equal[2], t.unequal[3])


@dataclass(frozen=True)
class SecondaryBellResult:
    n3e: int
    n1e: int
    n2u: int

    @property
    def violated(self) -> bool:
        return self.n3e > self.n1e + self.n2u

    def to_dict(self) -> dict:
        return {"n3e": self.n3e, "n1e": self.n1e, "n2u": self.n2u, "violated": self.violated}


def secondary_bell_test(t: Tally) -> SecondaryBellResult:
    """The companion inequality N3(E) <= N1(E) + N2(U), strict like :func:`bell_test`."""
    return SecondaryBellResult(t.equal[3], t.equal[1], t.unequal[2])


def _check_configs(t: Tally, configs: Iterable[int]) -> None:
    empty = [d for d in configs if t.total[d] == 0]
    if empty:
        raise InsufficientSamples(f"no pairs at configuration(s) {empty}")


@dataclass(frozen=True)
class ChshResult:
    e: tuple[float, float, float, float]
    s: float
    violated: bool

    def to_dict(self) -> dict:
        return {"e": list(self.e), "s": self.s, "violated": self.violated}


def chsh_s(e):
    """Largest of the four sign combinations; works on floats or Fractions."""
    e0, e1, e2, e3 = e
    return max(
        abs(e0 + e1 + e2 - e3),
        abs(e0 + e1 - e2 + e3),
        abs(e0 - e1 + e2 + e3),
        abs(e1 + e2 + e3 - e0),
    )


def chsh(t: Tally) -> ChshResult:
    """S from the four equal-outcome correlations.

    S is evaluated in exact rationals so that S == 2 ties, which are common
    for small n, are never pushed over the threshold by rounding.
    """
    _check_configs(t, range(4))
    exact = tuple(Fraction(2 * e - n, n) for e, n in zip(t.equal, t.total))
    s = chsh_s(exact)
    return ChshResult(tuple(float(x) for x in exact), float(s), s > 2)  # type: ignore[arg-type]


@dataclass(frozen=True)
class AntiCorrResult:
    equal_angle_total: int
    misses: int

    @property
    def percent(self) -> float:
        return 100.0 * (1 - self.misses / self.equal_angle_total)

    @property
    def perfect(self) -> bool:
        return self.misses == 0

    def to_dict(self) -> dict:
        return {
            "equal_angle_total": self.equal_angle_total,
            "misses": self.misses,
            "percent": self.percent,
            "perfect": self.perfect,
        }


def anticorr_audit(t: Tally) -> AntiCorrResult:
    _check_configs(t, [0])
    return AntiCorrResult(t.total[0], t.equal[0])


@dataclass(frozen=True)
class ClassConfigMatrix:
    """counts[i][d]: pairs of hidden-variable class i measured at configuration d."""

    counts: tuple[tuple[int, int, int, int], ...] = field(
        default_factory=lambda: tuple((0, 0, 0, 0) for _ in range(8))
    )

    def __post_init__(self) -> None:
        if len(self.counts) != 8 or any(len(row) != 4 for row in self.counts):
            raise ValueError("class/config matrix must be 8 x 4")
        if any(c < 0 for row in self.counts for c in row):
            raise ValueError("counts must be non-negative")

    @classmethod
    def from_arrays(cls, classes: np.ndarray, d: np.ndarray) -> "ClassConfigMatrix":
        flat = np.bincount(classes.astype(np.int64) * 4 + d, minlength=32).reshape(8, 4)
        return cls(tuple(tuple(int(c) for c in row) for row in flat))  # type: ignore[misc]

    @property
    def class_totals(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.counts)

    def to_dict(self) -> dict:
        return {"counts": [list(row) for row in self.counts]}


def class_config_check(m: ClassConfigMatrix) -> float:
    """Largest |N^i_d - N^i/4| in units of the binomial sd sqrt(N^i * 3/16).

    Classes with no pairs are skipped; returns 0.0 if every class is empty.
    """
    worst = 0.0
    for row in m.counts:
        total = sum(row)
        if total == 0:
            continue
        sigma = math.sqrt(total * 0.25 * 0.75)
        worst = max(worst, max(abs(c - total / 4) for c in row) / sigma)
    return worst
