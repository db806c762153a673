"""Station processes speaking the challenge protocol.

These wrap the built-in hidden-variable models as the contender side of a
session: the source draws hidden variables and ships them as opaque
payloads, and the alice and bob stations read out their own payload at the
angle the referee discloses.  Each station is a separate process that only
ever talks to the referee.

Run one with ``python -m eprbell.challenge --role alice --model saturated``.
"""

from __future__ import annotations

import argparse
import contextlib
import functools
import socket
import subprocess
import sys
from typing import Any, Iterator

import numpy as np

from .. import rng as rngmod
from ..core import Model
from ..hv import LocalModel, PreparedPair, decode_payload, local_model
from . import protocol as wire
from .referee import Endpoint


class NotChallengeable(ValueError):
    """The model cannot be split into local stations."""


def check_challengeable(model: Model | str) -> Model:
    model = Model(model)
    if model is Model.QUANTUM:
        raise NotChallengeable(
            "the quantum model needs the joint relative angle of both stations, "
            "which no local station can know; it cannot enter a challenge"
        )
    if not model.is_hidden_variable:
        raise NotChallengeable(f"{model.value} has no built-in station adapter")
    return model


class SourceStation:
    def __init__(self, model: LocalModel, seed: int):
        self.model = model
        self.seed = seed
        self.n = 0
        self._run: int | None = None
        self._payloads: list[str] = []

    def _payload(self, run: int, pair_id: int) -> str:
        if run != self._run:
            stream = rngmod.substream(self.seed, self.n, run, rngmod.SOURCE)
            bits, original = self.model.prepare_batch(stream, self.n)
            rows = np.column_stack([bits, original]).astype(np.uint8)
            self._payloads = [wire.encode_payload(row.tobytes()) for row in rows]
            self._run = run
        return self._payloads[pair_id]

    def handle(self, msg: dict[str, Any]) -> list[dict[str, Any]]:
        kind = msg["kind"]
        if kind == "HELLO":
            self.n = int(msg["n"])
            return [{"kind": "HELLO", "role": "source"}]
        if kind == "PREPARE":
            run, j = msg["run"], msg["pair_id"]
            if j >= self.n:
                return [wire.fault(f"pair {j} out of range")]
            payload = self._payload(run, j)
            return [{"kind": "HV", "run": run, "pair_id": j, "alice": payload, "bob": payload}]
        return []


@functools.lru_cache(maxsize=256)
def _read_payload(text: str) -> PreparedPair:
    return decode_payload(wire.decode_payload(text))


class MeasuringStation:
    def __init__(self, role: str, model: LocalModel):
        self.role = role
        self.model = model
        self._pairs: dict[tuple[int, int], PreparedPair] = {}

    def handle(self, msg: dict[str, Any]) -> list[dict[str, Any]]:
        kind = msg["kind"]
        if kind == "HELLO":
            return [{"kind": "HELLO", "role": self.role}]
        if kind == "HV":
            key = (msg["run"], msg["pair_id"])
            self._pairs[key] = _read_payload(msg["payload"])
            return [{"kind": "HV_ACK", "run": key[0], "pair_id": key[1]}]
        if kind == "ANGLE":
            key = (msg["run"], msg["pair_id"])
            pair = self._pairs.pop(key)
            if self.role == "alice":
                bit = self.model.alice(pair, msg["code"])
            else:
                bit = self.model.bob(pair, msg["code"])
            return [{"kind": "OUTCOME", "run": key[0], "pair_id": key[1], "bit": bit}]
        if kind == "RUN_DONE":
            self._pairs.clear()
        return []


def make_station(role: str, model: Model | str, seed: int):
    hv = local_model(check_challengeable(model))
    if role == "source":
        return SourceStation(hv, rngmod.check_seed(seed))
    if role in wire.STATION_ROLES:
        return MeasuringStation(role, hv)
    raise ValueError(f"unknown role {role!r}")


def serve_connection(conn: socket.socket, station) -> None:
    """Answer referee messages until the referee closes, sends SCORE, or faults."""
    partial = b""
    while True:
        chunk = conn.recv(1 << 16)
        if not chunk:
            return
        *lines, partial = (partial + chunk).split(b"\n")
        out: list[bytes] = []
        done = False
        for line in lines:
            try:
                msg = wire.decode(line)
                if msg["kind"] in ("SCORE", "FAULT"):
                    done = True
                    break
                replies = station.handle(msg)
            except (wire.MalformedMessage, KeyError, ValueError) as exc:
                replies, done = [wire.fault(f"station error: {exc}")], True
            out.extend(wire.encode(r) for r in replies)
            if done:
                break
        if out:
            conn.sendall(b"".join(out))
        if done:
            return


def serve(role: str, model: str, seed: int, host: str = "127.0.0.1", port: int = 0) -> None:
    station = make_station(role, model, seed)
    with socket.create_server((host, port)) as listener:
        bound_host, bound_port = listener.getsockname()[:2]
        print(f"LISTENING {bound_host} {bound_port}", flush=True)
        conn, _ = listener.accept()
        with conn:
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            serve_connection(conn, station)


@contextlib.contextmanager
def spawn_builtin_stations(model: Model | str, seed: int, host: str = "127.0.0.1") -> Iterator[dict[str, Endpoint]]:
    """Start source, alice and bob as three separate processes.

    Yields their endpoints; the processes are terminated on exit.
    """
    model = check_challengeable(model)
    rngmod.check_seed(seed)
    procs: list[subprocess.Popen] = []
    endpoints: dict[str, Endpoint] = {}
    try:
        for role in wire.ROLES:
            proc = subprocess.Popen(
                [
                    sys.executable, "-m", "eprbell.challenge",
                    "--role", role, "--model", model.value, "--seed", str(seed),
                    "--host", host, "--port", "0",
                ],
                stdout=subprocess.PIPE,
                text=True,
            )
            procs.append(proc)
            line = proc.stdout.readline().split()
            if len(line) != 3 or line[0] != "LISTENING":
                raise RuntimeError(f"{role} station failed to start")
            endpoints[role] = Endpoint(line[1], int(line[2]))
        yield endpoints
    finally:
        for proc in procs:
            if proc.poll() is None:
                proc.terminate()
        for proc in procs:
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
            if proc.stdout:
                proc.stdout.close()


def build_parser(parser: argparse.ArgumentParser | None = None) -> argparse.ArgumentParser:
    parser = parser or argparse.ArgumentParser(description="Run one challenge station.")
    parser.add_argument("--role", choices=wire.ROLES, required=True)
    parser.add_argument("--model", choices=["bell-random", "saturated", "cheating"], required=True)
    parser.add_argument("--seed", type=int, default=0, help="seed for the source's hidden variables")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0, help="0 picks a free port")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        serve(args.role, args.model, args.seed, args.host, args.port)
    except (ConnectionError, KeyboardInterrupt):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
