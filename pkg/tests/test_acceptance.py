"""Acceptance criteria, each at its stated tolerance, seed 7.

Counts from a 1000-trial sweep are compared to reference counts with a
binomial band of 3 sigma at the reference probability.  Where the reference
probability is 0 or 1 the band would be empty, so 2 counts are allowed.

Every test logs exactly one ``PASS``/``FAIL`` line.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time

import numpy as np
import pytest

import oracles
from eprbell.challenge import ProtocolFault, SessionConfig, referee_session
from eprbell.cli import main
from eprbell.core import ALL_SETTINGS
from eprbell.hv import ALL_TRIPLES, HvTriple, PreparedPair, measure_alice, measure_bob, saturate
from eprbell.montecarlo import run_trial, run_trials
from eprbell.stats import Tally, bell_test, class_config_check
from stations import EagerAlice, threaded_stations

SEED = 7
PAIRS = [40, 80, 160, 200, 400, 800]
TRIALS = 1000

QUANTUM_BELL = [350, 253, 164, 123, 52, 9]
QUANTUM_CHSH = [150, 103, 39, 21, 1, 0]
RANDOM_BELL = [925, 983, 995, 1000, 1000, 1000]
RANDOM_CHSH = [794, 969, 999, 1000, 1000, 1000]

# exact P(S <= 2) at n = 40 from oracles.chsh_probabilities (about two minutes
# each to enumerate, so frozen here; the n = 12 case is recomputed in
# test_montecarlo)
EXACT_CHSH_OBEY_40 = {"bell-random": 0.8420999775588519, "quantum": 0.15888677592514663}
EXACT_EMPTY_CONFIG_40 = 4.022633518958125e-05


def band(reference: int, trials: int) -> float:
    p = reference / trials
    return max(3 * math.sqrt(trials * p * (1 - p)), 2.0)


def _report(log, criterion: str, checks: list[tuple[str, bool]], note: str = "") -> bool:
    ok = all(passed for _, passed in checks)
    failed = [name for name, passed in checks if not passed]
    detail = "; ".join(name for name, _ in checks)
    status = "PASS" if ok else "FAIL"
    line = f"{status} criterion {criterion}: {detail}"
    if failed:
        line += f"  <-- failing: {', '.join(failed)}"
    if note:
        line += f"  [{note}]"
    log(line)
    return ok


def _sweep_csv(capsys, model: str, *extra: str) -> str:
    code = main([
        "sweep", "--model", model, "--pairs", ",".join(map(str, PAIRS)),
        "--trials", str(TRIALS), "--seed", str(SEED), *extra,
    ])
    out, _ = capsys.readouterr()
    assert code == 0
    return out


def _rows(text: str) -> dict[int, dict]:
    return {int(r["pairs"]): r for r in csv.DictReader(io.StringIO(text))}


def _count_checks(rows, column, references):
    checks = []
    for n, ref in zip(PAIRS, references):
        got = int(rows[n][column])
        tol = band(ref, TRIALS)
        checks.append((f"{column}@{n}={got} (ref {ref}+-{tol:.1f})", abs(got - ref) <= tol))
    return checks


def test_criterion_1_quantum_sweep(capsys, acceptance_log):
    started = time.perf_counter()
    rows = _rows(_sweep_csv(capsys, "quantum"))
    elapsed = time.perf_counter() - started
    checks = _count_checks(rows, "bell_obeyed", QUANTUM_BELL)
    checks += _count_checks(rows, "chsh_obeyed", QUANTUM_CHSH)
    checks.append((f"runtime {elapsed:.1f}s < 60s", elapsed < 60))
    note = f"exact expected chsh_obeyed@40 = {TRIALS * EXACT_CHSH_OBEY_40['quantum']:.1f}"
    assert _report(acceptance_log, "1 (quantum sweep)", checks, note)


def test_criterion_2_bell_random_sweep(capsys, acceptance_log):
    rows = _rows(_sweep_csv(capsys, "bell-random"))
    checks = _count_checks(rows, "bell_obeyed", RANDOM_BELL)
    checks += _count_checks(rows, "chsh_obeyed", RANDOM_CHSH)
    violations = TRIALS - int(rows[800]["bell_obeyed"])
    checks.append((f"bell violations@800={violations} <= 2", violations <= 2))
    note = f"exact expected chsh_obeyed@40 = {TRIALS * EXACT_CHSH_OBEY_40['bell-random']:.1f}"
    assert _report(acceptance_log, "2 (bell-random sweep)", checks, note)


def test_criterion_3_quantum_mean_s(capsys, acceptance_log):
    code = main(["sweep", "--model", "quantum", "--pairs", "800", "--trials", "1000", "--seed", str(SEED)])
    out, _ = capsys.readouterr()
    mean_s = float(_rows(out)[800]["mean_S"])
    # independent asymptote: E_d = -cos(2 delta_d) at delta_d = d pi/8
    e = [-math.cos(2 * d * math.pi / 8) for d in range(4)]
    asymptote = abs(e[0] + e[1] + e[2] - e[3])
    checks = [
        (f"oracle asymptote {asymptote:.6f} = 1+sqrt2", math.isclose(asymptote, 1 + math.sqrt(2))),
        (f"mean S {mean_s:.4f} within 2.414+-0.03", code == 0 and abs(mean_s - 2.414) <= 0.03),
    ]
    assert _report(acceptance_log, "3 (quantum mean S)", checks)


def _rates(model: str, trials: int = 2000):
    results = run_trials(model, 800, trials, SEED)
    bell = sum(r.bell.violated for r in results) / trials
    chsh = sum(r.chsh is not None and r.chsh.violated for r in results) / trials
    audits = [r.anticorr for r in results]
    return bell, chsh, audits


def test_criterion_4_saturated(acceptance_log):
    bell, chsh, audits = _rates("saturated")
    perfect = all(a is not None and a.perfect for a in audits)
    checks = [
        (f"bell violation {bell:.2%} within 50+-4%", abs(bell - 0.50) <= 0.04),
        (f"chsh violation {chsh:.2%} within 50+-4%", abs(chsh - 0.50) <= 0.04),
        ("anti-correlation perfect in all 2000 trials", perfect),
    ]
    assert _report(acceptance_log, "4 (saturated, n=800, R=2000)", checks)


def test_criterion_5_cheating(acceptance_log):
    bell, chsh, audits = _rates("cheating")
    anticorr = float(np.mean([a.percent for a in audits]))
    exact = 1 - oracles.bell_obey_probability("cheating", 800)
    checks = [
        (f"bell violation {bell:.2%} within 85+-4% (exact {exact:.2%})", abs(bell - 0.85) <= 0.04),
        (f"chsh violation {chsh:.2%} within 50+-5%", abs(chsh - 0.50) <= 0.05),
        (f"mean anti-correlation {anticorr:.2f}% within 87+-1.5%", abs(anticorr - 87) <= 1.5),
    ]
    assert _report(acceptance_log, "5 (cheating, n=800, R=2000)", checks)


# hand enumeration: (class, configuration) cells for each outcome (A, B)
OUTCOME_CELLS = {
    (1, 0): [(4, 0), (4, 1), (4, 2), (4, 3), (0, 0), (0, 2), (1, 0), (5, 0), (5, 3), (6, 1)],
    (0, 0): [(0, 1), (0, 3), (1, 3), (2, 1), (2, 2), (6, 2)],
    (1, 1): [(1, 2), (5, 1), (5, 2), (6, 3), (7, 1), (7, 3)],
    (0, 1): [(1, 1), (2, 0), (2, 3), (6, 0), (7, 0), (7, 2), (3, 0), (3, 1), (3, 2), (3, 3)],
}


def test_criterion_6_exhaustive(acceptance_log):
    started = time.perf_counter()
    setting_of = {s.d: s for s in ALL_SETTINGS}

    def outcome(i, d):
        pair = PreparedPair.honest(HvTriple.from_index(i))
        s = setting_of[d]
        return measure_alice(pair, s.a), measure_bob(pair, s.b)

    anticorr = all(
        measure_alice(PreparedPair.honest(hv), 0) != measure_bob(PreparedPair.honest(hv), 0) for hv in ALL_TRIPLES
    )
    sat = [saturate(hv) for hv in ALL_TRIPLES]
    idempotent = all(saturate(h) == h for h in sat)
    image = {h.index for h in sat} == {0, 1, 3, 4, 6, 7}
    table = all(outcome(i, d) == ab for ab, cells in OUTCOME_CELLS.items() for i, d in cells)
    covers = sorted(c for cells in OUTCOME_CELLS.values() for c in cells) == [(i, d) for i in range(8) for d in range(4)]
    fixed = all(outcome(4, d) == (1, 0) and outcome(3, d) == (0, 1) for d in range(4))
    boundary = bell_test(Tally(total=(200, 147, 107, 45), equal=(0, 5, 102, 5)))
    elapsed = time.perf_counter() - started
    checks = [
        ("8-triple anti-correlation", anticorr),
        ("saturate idempotent", idempotent),
        ("saturate image {0,1,3,4,6,7}", image),
        ("32-cell outcome table", table and covers),
        ("class 4 -> (1,0), class 3 -> (0,1)", fixed),
        ("(142,102,40) not violated", (boundary.n1u, boundary.n2e, boundary.n3u) == (142, 102, 40) and not boundary.violated),
        (f"runtime {elapsed * 1000:.1f}ms < 1s", elapsed < 1.0),
    ]
    assert _report(acceptance_log, "6 (exhaustive exactness)", checks)


def test_criterion_7_class_config_balance(acceptance_log):
    result = run_trial("bell-random", 8000, SEED)
    stat = class_config_check(result.class_matrix)
    # oracle: the same statistic on direct multinomial draws with equal cell
    # probabilities, to show the 5 sigma bound is loose for a fair design
    rng = np.random.default_rng(SEED)
    draws = rng.multinomial(8000, [1 / 32] * 32, size=500).reshape(500, 8, 4)
    totals = draws.sum(axis=2, keepdims=True)
    oracle = np.max(np.abs(draws - totals / 4) / np.sqrt(totals * 3 / 16), axis=(1, 2))
    checks = [
        (f"statistic {stat:.3f} < 5", stat < 5),
        (f"multinomial oracle max over 500 draws {oracle.max():.3f} < 5", oracle.max() < 5),
    ]
    assert _report(acceptance_log, "7 (class/config balance, n=8000)", checks)


def _two_sample_ok(k1, n1, k2, n2):
    p = (k1 + k2) / (n1 + n2)
    sigma = math.sqrt(p * (1 - p) * (1 / n1 + 1 / n2))
    return abs(k1 / n1 - k2 / n2) <= 3 * sigma + 1e-12


def test_criterion_8_challenge_equivalence(capsys, acceptance_log):
    started = time.perf_counter()
    checks = []
    for model in ("bell-random", "saturated", "cheating"):
        code = main(["challenge", "--builtin", model, "--pairs", "800", "--runs", "200",
                     "--seed", str(SEED), "--format", "json"])
        out, err = capsys.readouterr()
        if code != 0:
            checks.append((f"{model}: session failed: {err.strip()}", False))
            continue
        per_run = json.loads(out)["results"]["per_run"]
        bell_k = sum(r["bell"]["violated"] for r in per_run)
        chsh_k = sum(r["S"] is not None and r["S"] > 2 for r in per_run)
        # in-process reference from an independent seed
        ref = run_trials(model, 800, 2000, SEED + 1000)
        ref_bell = sum(r.bell.violated for r in ref)
        ref_chsh = sum(r.chsh is not None and r.chsh.violated for r in ref)
        ok = _two_sample_ok(bell_k, 200, ref_bell, 2000) and _two_sample_ok(chsh_k, 200, ref_chsh, 2000)
        checks.append((f"{model} bell {bell_k / 200:.3f} vs {ref_bell / 2000:.3f}, "
                       f"chsh {chsh_k / 200:.3f} vs {ref_chsh / 2000:.3f}", ok))
    faults = 0
    attempts = 20
    for attempt in range(attempts):
        with threaded_stations("saturated", attempt, {"alice": EagerAlice("saturated")}) as eps:
            try:
                referee_session(SessionConfig(800, 1, attempt, eps, 2.0))
            except ProtocolFault as exc:
                faults += "before its ANGLE" in exc.reason
    checks.append((f"rogue OUTCOME-before-ANGLE faulted {faults}/{attempts}", faults == attempts))
    elapsed = time.perf_counter() - started
    checks.append((f"runtime {elapsed:.1f}s < 120s", elapsed < 120))
    assert _report(acceptance_log, "8 (challenge harness)", checks)


def test_criterion_9_determinism(capsys, acceptance_log):
    def capture(argv):
        assert main(argv) == 0
        return capsys.readouterr()[0]

    sweep = ["sweep", "--model", "quantum,cheating", "--pairs", "40,200", "--trials", "200", "--seed", str(SEED)]
    checks = []
    for fmt in ("csv", "json"):
        outs = [capture(sweep + ["--format", fmt, "--workers", str(w)]) for w in (1, 1, 8)]
        checks.append((f"sweep {fmt} repeat identical", outs[0] == outs[1]))
        checks.append((f"sweep {fmt} workers 1 == 8", outs[0] == outs[2]))
    run = ["run", "--model", "cheating", "--seed", str(SEED), "--format", "json"]
    checks.append(("run json repeat identical", capture(run) == capture(run)))
    challenge = ["challenge", "--builtin", "saturated", "--pairs", "200", "--runs", "5", "--seed", str(SEED),
                 "--format", "json"]
    checks.append(("challenge json repeat identical", capture(challenge) == capture(challenge)))
    assert _report(acceptance_log, "9 (determinism)", checks)


def test_frozen_oracles_are_consistent(acceptance_log):
    """Cheap cross-checks on the frozen exact values; not a numbered criterion."""
    p_random = EXACT_CHSH_OBEY_40["bell-random"]
    p_quantum = EXACT_CHSH_OBEY_40["quantum"]
    assert 0 < p_quantum < p_random < 1
    # every sample with an empty configuration counts as neither obeyed nor violated
    assert EXACT_EMPTY_CONFIG_40 == pytest.approx(4 * 0.75**40 - 6 * 0.5**40 + 4 * 0.25**40)


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("EPRBELL_SLOW"), reason="set EPRBELL_SLOW=1 (about five minutes)")
@pytest.mark.parametrize("model", ["bell-random", "quantum"])
def test_frozen_oracles_recompute(model):
    obey, empty = oracles.chsh_probabilities(model, 40)
    assert obey == pytest.approx(EXACT_CHSH_OBEY_40[model], rel=1e-9)
    assert empty == pytest.approx(EXACT_EMPTY_CONFIG_40, rel=1e-9)
