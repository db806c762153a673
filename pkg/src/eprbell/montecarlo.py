"""Repeated trials and violation-rate sweeps.

Trial ``r`` of an ``n``-pair sweep with master seed ``s`` draws its angles
from ``substream(s, n, r, SETTINGS)`` and its pair content from
``substream(s, n, r, SOURCE)``.  Results therefore do not depend on the
order trials are executed in or on how many worker processes run them.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .core import AngleSetting, Model, ModelSpec, PairRecord, draw_settings, quantum_outcomes
from .hv import class_of_bits, local_model
from .stats import (
    AntiCorrResult,
    BellResult,
    ChshResult,
    ClassConfigMatrix,
    InsufficientSamples,
    Tally,
    anticorr_audit,
    bell_test,
    chsh,
    tally_arrays,
)


def _as_spec(model: ModelSpec | Model | str) -> ModelSpec:
    if isinstance(model, ModelSpec):
        spec = model
    else:
        spec = ModelSpec(Model(model))
    if spec.variant is Model.EXTERNAL:
        raise ValueError("external models run through a challenge session, not in-process")
    return spec


@dataclass(frozen=True)
class PairBatch:
    """The raw pairs of one trial, as parallel int8 arrays."""

    a: np.ndarray
    b: np.ndarray
    alice: np.ndarray
    bob: np.ndarray
    classes: np.ndarray | None = None

    @property
    def d(self) -> np.ndarray:
        return np.abs(self.b.astype(np.int16) - self.a)

    def records(self) -> list[PairRecord]:
        return [
            PairRecord(j, AngleSetting(int(a), int(b)), int(x), int(y))
            for j, (a, b, x, y) in enumerate(zip(self.a, self.b, self.alice, self.bob))
        ]


def simulate_trial(model: ModelSpec | Model | str, n: int, seed: int, trial: int = 0) -> PairBatch:
    spec = _as_spec(model)
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    a, b = draw_settings(rngmod.substream(seed, n, trial, rngmod.SETTINGS), n)
    source = rngmod.substream(seed, n, trial, rngmod.SOURCE)
    if spec.variant is Model.QUANTUM:
        alice, bob = quantum_outcomes(source, a, b)
        return PairBatch(a, b, alice, bob)
    hv = local_model(spec)
    bits, original = hv.prepare_batch(source, n)
    alice, bob = hv.readout_batch(bits, original, a, b)
    return PairBatch(a, b, alice, bob, class_of_bits(bits))


@dataclass(frozen=True)
class TrialResult:
    tally: Tally
    bell: BellResult
    chsh: ChshResult | None
    anticorr: AntiCorrResult | None
    class_matrix: ClassConfigMatrix | None = None

    @property
    def chsh_indeterminate(self) -> bool:
        return self.chsh is None

    def to_dict(self) -> dict:
        return {
            "tally": self.tally.to_dict(),
            "bell": self.bell.to_dict(),
            "chsh": None if self.chsh is None else self.chsh.to_dict(),
            "anticorr": None if self.anticorr is None else self.anticorr.to_dict(),
            "class_matrix": None if self.class_matrix is None else self.class_matrix.to_dict(),
        }


def score(t: Tally, class_matrix: ClassConfigMatrix | None = None) -> TrialResult:
    """Evaluate every statistic on one tally; empty configurations become ``None``."""
    try:
        chsh_result = chsh(t)
    except InsufficientSamples:
        chsh_result = None
    try:
        audit = anticorr_audit(t)
    except InsufficientSamples:
        audit = None
    return TrialResult(t, bell_test(t), chsh_result, audit, class_matrix)


def score_batch(batch: PairBatch) -> TrialResult:
    t = tally_arrays(batch.a, batch.b, batch.alice, batch.bob)
    matrix = None if batch.classes is None else ClassConfigMatrix.from_arrays(batch.classes, batch.d)
    return score(t, matrix)


def run_trial(model: ModelSpec | Model | str, n: int, seed: int, trial: int = 0) -> TrialResult:
    return score_batch(simulate_trial(model, n, seed, trial))


def _run_chunk(job: tuple[str, int, int, int, int]) -> list[TrialResult]:
    model, n, seed, start, stop = job
    return [run_trial(model, n, seed, r) for r in range(start, stop)]


def _chunks(model: ModelSpec, n_values: Sequence[int], trials: int, seed: int, workers: int):
    size = max(1, min(250, trials // (4 * workers) or 1))
    for n in n_values:
        for start in range(0, trials, size):
            yield (model.name, n, seed, start, min(trials, start + size))


def run_trials_multi(
    model: ModelSpec | Model | str,
    n_values: Sequence[int],
    trials: int,
    seed: int,
    workers: int = 1,
) -> dict[int, list[TrialResult]]:
    """Run ``trials`` trials for every n; the output is independent of ``workers``."""
    spec = _as_spec(model)
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    if not n_values:
        raise ValueError("n_values must not be empty")
    if len(set(n_values)) != len(n_values) or min(n_values) < 1:
        raise ValueError(f"n_values must be distinct positive counts, got {list(n_values)}")
    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}")
    rngmod.check_seed(seed)
    jobs = list(_chunks(spec, n_values, trials, seed, workers))
    if workers == 1:
        results = [_run_chunk(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    out: dict[int, list[TrialResult]] = {n: [] for n in n_values}
    for job, part in zip(jobs, results):
        out[job[1]].extend(part)
    return out


def run_trials(
    model: ModelSpec | Model | str, n: int, trials: int, seed: int, workers: int = 1
) -> list[TrialResult]:
    return run_trials_multi(model, [n], trials, seed, workers)[n]


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values) if values else math.nan


@dataclass(frozen=True)
class SweepRow:
    n: int
    trials: int
    bell_obeyed: int
    chsh_obeyed: int
    chsh_indeterminate: int
    mean_s: float
    mean_anticorr_pct: float

    @property
    def bell_violated(self) -> int:
        return self.trials - self.bell_obeyed

    @property
    def chsh_violated(self) -> int:
        return self.trials - self.chsh_obeyed - self.chsh_indeterminate

    @classmethod
    def aggregate(cls, n: int, results: Sequence[TrialResult]) -> "SweepRow":
        s_values = [r.chsh.s for r in results if r.chsh is not None]
        audits = [r.anticorr.percent for r in results if r.anticorr is not None]
        return cls(
            n=n,
            trials=len(results),
            bell_obeyed=sum(not r.bell.violated for r in results),
            chsh_obeyed=sum(r.chsh is not None and not r.chsh.violated for r in results),
            chsh_indeterminate=sum(r.chsh is None for r in results),
            mean_s=_mean(s_values),
            mean_anticorr_pct=_mean(audits),
        )

    def to_dict(self) -> dict:
        return {
            "pairs": self.n,
            "trials": self.trials,
            "bell_obeyed": self.bell_obeyed,
            "chsh_obeyed": self.chsh_obeyed,
            "chsh_indeterminate": self.chsh_indeterminate,
            "mean_S": self.mean_s,
            "mean_anticorr_pct": self.mean_anticorr_pct,
        }


@dataclass(frozen=True)
class SweepReport:
    model: ModelSpec
    trials: int
    seed: int
    rows: tuple[SweepRow, ...]

    def row(self, n: int) -> SweepRow:
        for r in self.rows:
            if r.n == n:
                return r
        raise KeyError(n)

    def to_dict(self) -> dict:
        return {
            "model": self.model.name,
            "trials": self.trials,
            "seed": self.seed,
            "rows": [r.to_dict() for r in self.rows],
        }


def sweep(
    model: ModelSpec | Model | str,
    n_values: Sequence[int],
    trials: int,
    seed: int,
    workers: int = 1,
) -> SweepReport:
    spec = _as_spec(model)
    by_n = run_trials_multi(spec, n_values, trials, seed, workers)
    rows = tuple(SweepRow.aggregate(n, by_n[n]) for n in n_values)
    return SweepReport(spec, trials, seed, rows)


FIG1_PAIRS = (40, 80, 160, 200, 400, 800)
FIG1_TRIALS = 1000
