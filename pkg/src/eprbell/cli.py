"""Command-line front end: ``eprbell run | sweep | challenge | station``.

Reports are deterministic functions of the echoed command line.  Wall-clock
time and worker count never enter a report (pass ``--timing`` to get the
duration on stderr), so repeated runs and different ``--workers`` values
produce byte-identical output.

Exit codes: 0 success, 1 runtime fault, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import math
import os
import shlex
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from . import rng as rngmod
from .challenge import (
    Endpoint, NotChallengeable, ProtocolFault, SessionConfig, Transcript,
    check_challengeable, referee_session, spawn_builtin_stations,
)
from .challenge.protocol import ROLES
from .challenge.station import build_parser as station_parser
from .challenge.station import serve
from .montecarlo import FIG1_PAIRS, FIG1_TRIALS, SweepReport, run_trial, sweep
from .stats import secondary_bell_test

SEED_ENV = "EPRBELL_SEED"
SIM_MODELS = ("quantum", "bell-random", "saturated", "cheating")
CSV_COLUMNS = (
    "model", "pairs", "trials", "bell_obeyed", "chsh_obeyed",
    "chsh_indeterminate", "mean_S", "mean_anticorr_pct",
)
PLOT_COLUMNS = ("model", "inequality", "log2_pairs", "obeyed")

BELL_HINT = (
    "The Bell inequality predicts that the first number is smaller than "
    "the sum of the second and third numbers."
)
ANTICORR_FAIL = (
    "% Anti-correlation only. Model fails to describe the anti-correlation "
    "when Alice and Bob happen to measure with the same angle."
)


class UsageError(Exception):
    """Bad flag combination detected after parsing."""


# -- argument types -----------------------------------------------------------

def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _index(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {value}")
    return value


def _seed(text: str) -> int:
    try:
        return rngmod.check_seed(int(text))
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(
            f"seed must be an integer in [0, {rngmod.MAX_SEED}], got {text!r}"
        ) from None


def _int_list(text: str) -> list[int]:
    values = [_positive_int(part.strip()) for part in text.split(",") if part.strip()]
    if not values:
        raise argparse.ArgumentTypeError("expected a comma-separated list of positive integers")
    if len(set(values)) != len(values):
        raise argparse.ArgumentTypeError(f"duplicate values in {text!r}")
    return values


def _model_list(text: str) -> list[str]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    bad = [n for n in names if n not in SIM_MODELS]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"models must be drawn from {', '.join(SIM_MODELS)}; got {text!r}"
        )
    if len(set(names)) != len(names):
        raise argparse.ArgumentTypeError(f"duplicate models in {text!r}")
    return names


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return _seed(raw)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"{SEED_ENV}: {exc}") from None


# -- report plumbing ----------------------------------------------------------

def _finite(obj: Any) -> Any:
    """NaN has no JSON spelling; report it as null."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def envelope(command: Sequence[str], config: dict[str, Any], results: Any) -> dict[str, Any]:
    return {
        "tool": "eprbell",
        "version": __version__,
        "command": shlex.join(command),
        "config": config,
        "results": results,
    }


def dumps_json(obj: Any) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_float(x: float) -> str:
    # repr is locale-independent and round-trips exactly
    return "nan" if math.isnan(x) else repr(float(x))


def sweep_csv(reports: Sequence[SweepReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        for row in rep.rows:
            writer.writerow([
                rep.model.name, row.n, row.trials, row.bell_obeyed, row.chsh_obeyed,
                row.chsh_indeterminate, _csv_float(row.mean_s), _csv_float(row.mean_anticorr_pct),
            ])
    return buf.getvalue()


def plot_csv(reports: Sequence[SweepReport]) -> str:
    """Obeyed counts against log2(n), one series per model and inequality."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_COLUMNS)
    for rep in reports:
        for inequality in ("bell", "chsh"):
            for row in rep.rows:
                obeyed = row.bell_obeyed if inequality == "bell" else row.chsh_obeyed
                writer.writerow([rep.model.name, inequality, _csv_float(math.log2(row.n)), obeyed])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        # newline="" keeps LF endings on every platform
        Path(out).write_text(text, encoding="utf-8", newline="")


# -- run ----------------------------------------------------------------------

def render_run_text(result, secondary: bool = False) -> str:
    lines = []
    audit = result.anticorr
    if audit is None:
        lines.append("Anti-correlation not tested: no pairs measured at equal angles.")
    elif audit.perfect:
        lines.append("Anti-correlation at equal angles OK.")
    else:
        lines.append(f"{audit.percent:.6g}{ANTICORR_FAIL}")
    bell = result.bell
    lines.append(f"{{{bell.n1u}, {bell.n2e}, {bell.n3u}}}")
    lines.append(BELL_HINT)
    lines.append("Bell's inequality is violated!" if bell.violated else "Bell inequality not violated.")
    if secondary:
        sec = secondary_bell_test(result.tally)
        lines.append(f"{{{sec.n3e}, {sec.n1e}, {sec.n2u}}}")
        lines.append(
            "Secondary inequality is violated!" if sec.violated else "Secondary inequality not violated."
        )
    if result.chsh is None:
        empty = [d for d in range(4) if result.tally.total[d] == 0]
        lines.append(f"CHSH undefined: no pairs at configuration(s) {empty}.")
    else:
        verdict = "CHSH inequality is violated!" if result.chsh.violated else "CHSH inequality is not violated."
        lines.append(f"{{{result.chsh.s:.6g}, {verdict}}}")
    return "\n".join(lines) + "\n"


def cmd_run(args: argparse.Namespace) -> int:
    result = run_trial(args.model, args.pairs, args.seed, args.trial)
    command = ["eprbell", "run", "--model", args.model, "--pairs", str(args.pairs),
               "--seed", str(args.seed), "--trial", str(args.trial)]
    if args.secondary:
        command.append("--secondary")
    if args.format == "json":
        results = result.to_dict()
        if args.secondary:
            results["secondary_bell"] = secondary_bell_test(result.tally).to_dict()
        config = {"model": args.model, "pairs": args.pairs, "seed": args.seed, "trial": args.trial}
        sys.stdout.write(dumps_json(envelope(command + ["--format", "json"], config, results)))
    else:
        sys.stdout.write(render_run_text(result, args.secondary))
    if args.strict and (result.chsh is None or result.anticorr is None):
        print("error: a statistic is undefined because a configuration received no pairs",
              file=sys.stderr)
        return 1
    return 0


# -- sweep --------------------------------------------------------------------

def _resolve_sweep(args: argparse.Namespace) -> None:
    if args.fig1:
        args.model = args.model or ["quantum", "bell-random"]
        args.pairs = args.pairs or list(FIG1_PAIRS)
        args.trials = args.trials or FIG1_TRIALS
    if not args.model:
        raise UsageError("sweep needs --model (or --fig1)")
    args.pairs = args.pairs or list(FIG1_PAIRS)
    args.trials = args.trials or FIG1_TRIALS


def cmd_sweep(args: argparse.Namespace) -> int:
    _resolve_sweep(args)
    reports = [sweep(m, args.pairs, args.trials, args.seed, args.workers) for m in args.model]
    command = ["eprbell", "sweep", "--model", ",".join(args.model),
               "--pairs", ",".join(map(str, args.pairs)), "--trials", str(args.trials),
               "--seed", str(args.seed), "--format", args.format]
    if args.format == "json":
        config = {"models": args.model, "pairs": args.pairs, "trials": args.trials, "seed": args.seed}
        text = dumps_json(envelope(command, config, [r.to_dict() for r in reports]))
    else:
        text = sweep_csv(reports)
    _emit(text, args.out)
    if args.plot:
        _emit(plot_csv(reports), args.plot)
    return 0


# -- challenge ----------------------------------------------------------------

def _parse_endpoints(items: Sequence[str]) -> dict[str, Any]:
    endpoints = {}
    for item in items:
        role, sep, addr = item.partition("=")
        if not sep or role not in ROLES:
            raise UsageError(f"--endpoint must look like ROLE=HOST:PORT with ROLE in {ROLES}, got {item!r}")
        if role in endpoints:
            raise UsageError(f"--endpoint given twice for {role}")
        try:
            endpoints[role] = Endpoint.parse(addr)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if set(endpoints) != set(ROLES):
        raise UsageError(f"--endpoint needed for each of {', '.join(ROLES)}")
    return endpoints


def render_score_text(score) -> str:
    s = score.summary()
    return (
        f"runs: {s['runs']}\n"
        f"Bell violation rate: {s['bell_violation_rate']:.4f}\n"
        f"CHSH violation rate: {s['chsh_violation_rate']:.4f}\n"
        f"CHSH indeterminate runs: {s['chsh_indeterminate']}\n"
        f"mean anti-correlation: {s['mean_anticorr_pct']:.4f}%\n"
        f"anti-correlation perfect in every run: {'yes' if s['anticorr_perfect_all'] else 'no'}\n"
        f"verdict: {s['verdict']}\n"
    )


def cmd_challenge(args: argparse.Namespace) -> int:
    if bool(args.builtin) == bool(args.endpoint):
        raise UsageError("give either --builtin MODEL or three --endpoint ROLE=HOST:PORT")
    station_seed = args.seed if args.station_seed is None else args.station_seed
    command = ["eprbell", "challenge"]
    if args.builtin:
        try:
            check_challengeable(args.builtin)
        except NotChallengeable as exc:
            raise UsageError(f"{args.builtin}: {exc}") from None
        command += ["--builtin", args.builtin, "--station-seed", str(station_seed)]
        stations = spawn_builtin_stations(args.builtin, station_seed)
    else:
        endpoints = _parse_endpoints(args.endpoint)
        command += [f"--endpoint={r}={endpoints[r]}" for r in sorted(endpoints)]
        stations = contextlib.nullcontext(endpoints)
    command += ["--pairs", str(args.pairs), "--runs", str(args.runs), "--seed", str(args.seed),
                "--format", args.format]

    with contextlib.ExitStack() as stack:
        transcript = None
        if args.transcript:
            sink = stack.enter_context(open(args.transcript, "w", encoding="utf-8", newline=""))
            transcript = Transcript(sink)
        try:
            endpoints = stack.enter_context(stations)
        except (OSError, RuntimeError) as exc:
            print(f"error: could not start stations: {exc}", file=sys.stderr)
            return 1
        cfg = SessionConfig(args.pairs, args.runs, args.seed, endpoints, args.timeout)
        try:
            score = referee_session(cfg, transcript)
        except ProtocolFault as exc:
            who = f" ({exc.role})" if exc.role else ""
            print(f"FAULT{who}: {exc.reason}", file=sys.stderr)
            return 1

    if args.format == "json":
        config = {"pairs": args.pairs, "runs": args.runs, "seed": args.seed,
                  "builtin": args.builtin, "station_seed": station_seed if args.builtin else None}
        sys.stdout.write(dumps_json(envelope(command, config, score.to_dict())))
    else:
        sys.stdout.write(render_score_text(score))
    return 0


def cmd_station(args: argparse.Namespace) -> int:
    try:
        serve(args.role, args.model, args.seed, args.host, args.port)
    except (ConnectionError, KeyboardInterrupt):
        return 1
    return 0


# -- parser -------------------------------------------------------------------

def build_parser(default_seed: int = 0) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eprbell",
        description="Simulate the three-angle EPR experiment and score Bell/CHSH violations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--timing", action="store_true", help="print wall-clock duration to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    seed_help = f"master seed (default: ${SEED_ENV} or 0)"

    p = sub.add_parser("run", help="one trial with verdict lines")
    p.add_argument("--model", choices=SIM_MODELS, required=True)
    p.add_argument("--pairs", type=_positive_int, default=800)
    p.add_argument("--seed", type=_seed, default=default_seed, help=seed_help)
    p.add_argument("--trial", type=_index, default=0, help="trial index within the seed (default 0)")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--strict", action="store_true", help="exit 1 if CHSH or the audit is undefined")
    p.add_argument("--secondary", action="store_true", help="also test N3(E) <= N1(E) + N2(U)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="many trials per pair count; CSV or JSON report")
    p.add_argument("--model", type=_model_list, help="model or comma-separated models")
    p.add_argument("--pairs", type=_int_list, help="comma-separated pair counts")
    p.add_argument("--trials", type=_positive_int, help=f"trials per pair count (default {FIG1_TRIALS})")
    p.add_argument("--seed", type=_seed, default=default_seed, help=seed_help)
    p.add_argument("--workers", type=_positive_int, default=1, help="worker processes; output is unaffected")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--plot", help="write log2(pairs) vs obeyed-count series here (CSV)")
    p.add_argument("--fig1", action="store_true",
                   help="quantum and bell-random at 40..800 pairs, 1000 trials")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("challenge", help="referee a session against three stations")
    p.add_argument("--builtin", metavar="MODEL", choices=SIM_MODELS,
                   help="spawn the built-in stations for a hidden-variable model")
    p.add_argument("--endpoint", action="append", default=[], metavar="ROLE=HOST:PORT",
                   help="external station; give once each for source, alice and bob")
    p.add_argument("--pairs", type=_positive_int, default=800)
    p.add_argument("--runs", type=_positive_int, default=100)
    p.add_argument("--seed", type=_seed, default=default_seed, help="referee angle seed; " + seed_help)
    p.add_argument("--station-seed", type=_seed, help="built-in source seed (default: --seed)")
    p.add_argument("--timeout", type=float, default=5.0, help="per-message timeout in seconds")
    p.add_argument("--transcript", help="write every message as JSON lines here")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_challenge)

    p = sub.add_parser("station", help="serve one built-in station")
    station_parser(p)
    p.set_defaults(func=cmd_station)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        parser = build_parser(_default_seed())
    except UsageError as exc:
        print(f"eprbell: error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.perf_counter()
    try:
        code = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"eprbell {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.timing:
        print(f"duration: {time.perf_counter() - started:.3f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
