"""Angle settings, run vocabulary and the quantum pair source.

Angles are integer codes in units of pi/8: Alice uses a in {0, 3} and Bob
uses b in {0, 2}.  The configuration index d = |b - a| labels the four
equally likely combinations and the signed code b - a gives the relative
angle delta = (b - a) * pi/8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

ALICE_CODES = (0, 3)
BOB_CODES = (0, 2)
ANGLE_UNIT = math.pi / 8

# sin^2 of the relative angle, indexed by d; sin^2 is even so |delta| suffices.
# d = 0 is exactly 0.0, which keeps equal-angle anti-correlation exact.
SIN2_BY_CONFIG = tuple(math.sin(d * ANGLE_UNIT) ** 2 for d in range(4))


class InvalidSetting(ValueError):
    """An angle code outside the allowed sets."""


def check_alice_code(a: int) -> int:
    if a not in ALICE_CODES or isinstance(a, bool):
        raise InvalidSetting(f"Alice's angle code must be 0 or 3, got {a!r}")
    return int(a)


def check_bob_code(b: int) -> int:
    if b not in BOB_CODES or isinstance(b, bool):
        raise InvalidSetting(f"Bob's angle code must be 0 or 2, got {b!r}")
    return int(b)


@dataclass(frozen=True)
class AngleSetting:
    a: int
    b: int

    def __post_init__(self) -> None:
        check_alice_code(self.a)
        check_bob_code(self.b)

    @property
    def d(self) -> int:
        return abs(self.b - self.a)

    @property
    def delta_code(self) -> int:
        return self.b - self.a

    @property
    def alpha(self) -> float:
        return self.a * ANGLE_UNIT

    @property
    def beta(self) -> float:
        return self.b * ANGLE_UNIT

    @property
    def delta(self) -> float:
        return self.delta_code * ANGLE_UNIT


ALL_SETTINGS = tuple(AngleSetting(a, b) for a in ALICE_CODES for b in BOB_CODES)


def config_of(setting: AngleSetting) -> tuple[int, int]:
    """Return ``(d, delta_code)`` for a setting."""
    check_alice_code(setting.a)
    check_bob_code(setting.b)
    return setting.d, setting.delta_code


@dataclass(frozen=True)
class PairRecord:
    pair_id: int
    setting: AngleSetting
    A: int
    B: int

    def __post_init__(self) -> None:
        if self.A not in (0, 1) or self.B not in (0, 1):
            raise ValueError(f"outcomes must be bits, got A={self.A!r}, B={self.B!r}")


class Model(str, Enum):
    QUANTUM = "quantum"
    BELL_RANDOM = "bell-random"
    SATURATED = "saturated"
    CHEATING = "cheating"
    EXTERNAL = "external"

    @property
    def is_hidden_variable(self) -> bool:
        return self in (Model.BELL_RANDOM, Model.SATURATED, Model.CHEATING)


@dataclass(frozen=True)
class ModelSpec:
    """Which pair source a run uses.

    ``endpoints`` is only meaningful for ``Model.EXTERNAL`` and maps the
    station roles (source, alice, bob) to ``host:port`` strings.
    """

    variant: Model
    endpoints: tuple[tuple[str, str], ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Model(self.variant))
        if (self.variant is Model.EXTERNAL) != (self.endpoints is not None):
            raise ValueError("endpoints are required for, and only for, the external variant")

    @classmethod
    def parse(cls, name: str) -> "ModelSpec":
        model = Model(name)
        if model is Model.EXTERNAL:
            raise ValueError("external models are described by their endpoints, not by name")
        return cls(model)

    @property
    def name(self) -> str:
        return self.variant.value


@dataclass(frozen=True)
class RunConfig:
    n: int
    seed: int
    model: ModelSpec

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")


def _setting_codes(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.where(u[..., 0] < 0.5, 0, 3).astype(np.int8)
    b = np.where(u[..., 1] < 0.5, 0, 2).astype(np.int8)
    return a, b


def draw_setting(rng: np.random.Generator) -> AngleSetting:
    """Alice's fair coin then Bob's fair coin."""
    a, b = _setting_codes(rng.random(2))
    return AngleSetting(int(a), int(b))


def draw_settings(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Bulk form of :func:`draw_setting`; consumes the stream identically."""
    return _setting_codes(rng.random((n, 2)))


def _quantum_from_uniforms(u: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    alice = (u[..., 0] >= 0.5).astype(np.int8)
    p_equal = np.asarray(SIN2_BY_CONFIG)[np.abs(b.astype(np.int16) - a)]
    bob = np.where(u[..., 1] < p_equal, alice, 1 - alice).astype(np.int8)
    return alice, bob


def quantum_measure(rng: np.random.Generator, setting: AngleSetting) -> tuple[int, int]:
    """Sample one pair's outcomes with P(A == B) = sin^2(delta).

    Alice's bit is a fair coin; Bob copies it with probability sin^2(delta)
    and reports the complement otherwise.  This needs the joint relative
    angle, so it cannot be split into two local stations.
    """
    alice, bob = _quantum_from_uniforms(
        rng.random(2), np.int8(check_alice_code(setting.a)), np.int8(check_bob_code(setting.b))
    )
    return int(alice), int(bob)


def quantum_outcomes(rng: np.random.Generator, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bulk form of :func:`quantum_measure`."""
    return _quantum_from_uniforms(rng.random((len(a), 2)), a, b)
