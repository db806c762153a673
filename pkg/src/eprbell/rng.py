"""Seeded random streams.

Every trial owns independent PCG64 substreams derived with
``numpy.random.SeedSequence(entropy=master_seed, spawn_key=(n, trial, role))``.
Within a stream, draws are consumed pair by pair in a fixed order, so pair
``j`` always sees the same uniforms for a given ``(master_seed, n, trial)``.

Roles:
    SETTINGS  the angle choices (Alice's code, then Bob's code, per pair)
    SOURCE    whatever the pair source needs (quantum outcome uniforms, or
              the three hidden bits of a local model)

The referee of a challenge session owns the SETTINGS role and a station
adapter owns the SOURCE role, which is what lets a session replay an
in-process run exactly.
"""

from __future__ import annotations

import numpy as np

SETTINGS = 0
SOURCE = 1

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(master_seed: int, n: int, trial: int, role: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=check_seed(master_seed), spawn_key=(n, trial, role))
    return np.random.Generator(np.random.PCG64(ss))
