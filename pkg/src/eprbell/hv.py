"""Local hidden-variable models.

A pair carries three bits (A3, B0, B2): Alice's answer at a = 3, Bob's
answer at b = 0 and Bob's answer at b = 2.  Alice's answer at a = 0 is
forced to 1 - B0 by anti-correlation.  The class index 4*A3 + 2*B0 + B2
sorts pairs into eight classes.

Three models are provided:

* ``bell-random``: three fair bits, read out honestly.
* ``saturated``: classes 2 and 5 are moved to 6 and 1 by flipping A3,
  which turns the Bell inequality into an expected equality.
* ``cheating``: prepared like ``saturated``, but Alice reports B0 instead
  of 1 - B0 at a = 0 when the pair was *originally* drawn as class 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Model, ModelSpec, check_alice_code, check_bob_code

SATURATED_AWAY = (2, 5)


@dataclass(frozen=True)
class HvTriple:
    a3: int
    b0: int
    b2: int

    def __post_init__(self) -> None:
        for name in ("a3", "b0", "b2"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be a bit, got {getattr(self, name)!r}")

    @property
    def index(self) -> int:
        return 4 * self.a3 + 2 * self.b0 + self.b2

    @classmethod
    def from_index(cls, i: int) -> "HvTriple":
        if not 0 <= i <= 7:
            raise ValueError(f"class index must be in 0..7, got {i}")
        return cls((i >> 2) & 1, (i >> 1) & 1, i & 1)


ALL_TRIPLES = tuple(HvTriple.from_index(i) for i in range(8))


@dataclass(frozen=True)
class PreparedPair:
    hv: HvTriple
    original_class: int

    def __post_init__(self) -> None:
        if not 0 <= self.original_class <= 7:
            raise ValueError(f"original_class must be in 0..7, got {self.original_class}")

    @classmethod
    def honest(cls, hv: HvTriple) -> "PreparedPair":
        return cls(hv, hv.index)


def class_index(hv: HvTriple) -> int:
    return hv.index


def hv_random(rng: np.random.Generator) -> HvTriple:
    u = rng.random(3)
    return HvTriple(*(int(x >= 0.5) for x in u))


def saturate(hv: HvTriple) -> HvTriple:
    if hv.index in SATURATED_AWAY:
        return HvTriple(1 - hv.a3, hv.b0, hv.b2)
    return hv


def measure_alice(pair: PreparedPair, a: int, cheat: bool = False) -> int:
    if check_alice_code(a) == 3:
        return pair.hv.a3
    if cheat and pair.original_class == 1:
        return pair.hv.b0
    return 1 - pair.hv.b0


def measure_bob(pair: PreparedPair, b: int) -> int:
    return pair.hv.b0 if check_bob_code(b) == 0 else pair.hv.b2


@dataclass(frozen=True)
class LocalModel:
    """An in-process hidden-variable model: preparation plus local readouts.

    The bulk methods draw from the stream exactly as repeated calls to the
    scalar ones would, so both paths produce identical pairs.
    """

    name: str
    saturating: bool
    cheat: bool

    def prepare(self, rng: np.random.Generator) -> PreparedPair:
        hv = hv_random(rng)
        original = hv.index
        if self.saturating:
            hv = saturate(hv)
        return PreparedPair(hv, original)

    def alice(self, pair: PreparedPair, a: int) -> int:
        return measure_alice(pair, a, cheat=self.cheat)

    def bob(self, pair: PreparedPair, b: int) -> int:
        return measure_bob(pair, b)

    def prepare_batch(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(bits, original_class)``; ``bits`` has columns (A3, B0, B2)."""
        bits = (rng.random((n, 3)) >= 0.5).astype(np.int8)
        original = (4 * bits[:, 0] + 2 * bits[:, 1] + bits[:, 2]).astype(np.int8)
        if self.saturating:
            flip = np.isin(original, SATURATED_AWAY)
            bits[flip, 0] = 1 - bits[flip, 0]
        return bits, original

    def readout_batch(
        self, bits: np.ndarray, original: np.ndarray, a: np.ndarray, b: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        alice_at_zero = 1 - bits[:, 1]
        if self.cheat:
            alice_at_zero = np.where(original == 1, bits[:, 1], alice_at_zero)
        alice = np.where(a == 0, alice_at_zero, bits[:, 0]).astype(np.int8)
        bob = np.where(b == 0, bits[:, 1], bits[:, 2]).astype(np.int8)
        return alice, bob


_MODELS = {
    Model.BELL_RANDOM: LocalModel("bell-random", saturating=False, cheat=False),
    Model.SATURATED: LocalModel("saturated", saturating=True, cheat=False),
    Model.CHEATING: LocalModel("cheating", saturating=True, cheat=True),
}


def local_model(model: ModelSpec | Model | str) -> LocalModel:
    variant = model.variant if isinstance(model, ModelSpec) else Model(model)
    try:
        return _MODELS[variant]
    except KeyError:
        raise ValueError(f"{variant.value} is not a local hidden-variable model") from None


def prepare_pair(model: ModelSpec | Model | str, rng: np.random.Generator) -> PreparedPair:
    return local_model(model).prepare(rng)


def class_of_bits(bits: np.ndarray) -> np.ndarray:
    return (4 * bits[:, 0] + 2 * bits[:, 1] + bits[:, 2]).astype(np.int8)


def encode_payload(pair: PreparedPair) -> bytes:
    """Wire form used by the built-in station adapters: A3, B0, B2, original class."""
    return bytes((pair.hv.a3, pair.hv.b0, pair.hv.b2, pair.original_class))


def decode_payload(payload: bytes) -> PreparedPair:
    if len(payload) != 4:
        raise ValueError(f"expected a 4-byte hidden-variable payload, got {len(payload)} bytes")
    return PreparedPair(HvTriple(payload[0], payload[1], payload[2]), payload[3])
