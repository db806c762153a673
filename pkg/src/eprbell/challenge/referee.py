"""The referee side of a challenge session.

The referee connects to three stations (source, alice, bob) and is the only
party any of them talks to.  For every run it

1. asks the source to PREPARE each pair and receives the two opaque payloads,
2. forwards each payload as HV to its station and waits for HV_ACK,
3. only after both acknowledgements draws the angles from its own seeded
   stream and sends ANGLE,
4. collects one OUTCOME per station and pair.

Any deviation (timeout, malformed line, wrong kind, wrong run or pair,
OUTCOME before ANGLE) aborts the session with :class:`ProtocolFault`.
"""

from __future__ import annotations

import asyncio
import json
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Sequence

import numpy as np

from .. import rng as rngmod
from ..core import draw_settings
from ..montecarlo import PairBatch, TrialResult, score_batch
from . import protocol as wire

DEFAULT_TIMEOUT = 5.0
QUANTUM_LIKE_BELL_RATE = 0.99


class ProtocolFault(RuntimeError):
    def __init__(self, reason: str, role: str | None = None, transcript: "Transcript | None" = None):
        self.reason = reason
        self.role = role
        self.transcript = transcript
        super().__init__(f"{role}: {reason}" if role else reason)


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        host, sep, port = text.rpartition(":")
        if not sep or not host or not port.isdigit():
            raise ValueError(f"endpoint must look like HOST:PORT, got {text!r}")
        return cls(host, int(port))

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"


@dataclass(frozen=True)
class SessionConfig:
    n: int
    runs: int
    master_seed: int
    endpoints: dict[str, Endpoint]
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if self.runs < 1:
            raise ValueError(f"runs must be at least 1, got {self.runs}")
        rngmod.check_seed(self.master_seed)
        if set(self.endpoints) != set(wire.ROLES):
            raise ValueError(f"endpoints needed for exactly {wire.ROLES}, got {sorted(self.endpoints)}")
        if len(set(self.endpoints.values())) != 3:
            raise ValueError("the three stations must have distinct endpoints")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")


class Transcript:
    """Every message the referee sends or receives, with monotonic timestamps.

    Entries are kept in memory, or streamed as JSON lines when a file is given.
    """

    def __init__(self, sink: IO[str] | None = None):
        self.sink = sink
        self.entries: list[dict[str, Any]] = []
        self._t0 = time.monotonic_ns()

    def record(self, direction: str, role: str, msg: dict[str, Any]) -> None:
        entry = {"t_ns": time.monotonic_ns() - self._t0, "dir": direction, "peer": role, "msg": msg}
        if self.sink is None:
            self.entries.append(entry)
        else:
            self.sink.write(json.dumps(entry, separators=(",", ":")) + "\n")

    @staticmethod
    def load(path: str | Path) -> list[dict[str, Any]]:
        with open(path) as fh:
            return [json.loads(line) for line in fh]


class _Station:
    """One referee-side connection with line framing and a per-message timeout."""

    def __init__(self, role, reader, writer, timeout, transcript):
        self.role = role
        self.reader: asyncio.StreamReader = reader
        self.writer: asyncio.StreamWriter = writer
        self.timeout = timeout
        self.transcript: Transcript | None = transcript
        self._lines: deque[bytes] = deque()
        self._partial = b""
        self._out: list[bytes] = []
        # pairs of the current run for which HV / ANGLE has been sent
        self.hv_sent = 0
        self.angles_sent = 0

    def fault(self, reason: str) -> ProtocolFault:
        return ProtocolFault(reason, self.role, self.transcript)

    def send(self, msg: dict[str, Any]) -> None:
        if self.transcript is not None:
            self.transcript.record("send", self.role, msg)
        self._out.append(wire.encode(msg))

    def flush(self) -> None:
        # one write per batch: a syscall per line dominates otherwise
        if self._out:
            self.writer.write(b"".join(self._out))
            self._out.clear()

    async def drain(self) -> None:
        self.flush()
        try:
            await asyncio.wait_for(self.writer.drain(), self.timeout)
        except asyncio.TimeoutError:
            raise self.fault("timeout while sending") from None
        except ConnectionError as exc:
            raise self.fault(f"connection lost: {exc}") from None

    async def recv(self) -> dict[str, Any]:
        while not self._lines:
            self.flush()
            try:
                chunk = await asyncio.wait_for(self.reader.read(1 << 16), self.timeout)
            except asyncio.TimeoutError:
                raise self.fault(f"timeout: no message within {self.timeout:g} s") from None
            except ConnectionError as exc:
                raise self.fault(f"connection lost: {exc}") from None
            if not chunk:
                raise self.fault("connection closed")
            *lines, self._partial = (self._partial + chunk).split(b"\n")
            if len(self._partial) > wire.MAX_LINE:
                raise self.fault("malformed: line too long")
            self._lines.extend(lines)
        try:
            msg = wire.decode(self._lines.popleft())
        except wire.MalformedMessage as exc:
            raise self.fault(f"malformed: {exc}") from None
        if self.transcript is not None:
            self.transcript.record("recv", self.role, msg)
        if msg["kind"] == "FAULT":
            raise self.fault(f"station reported fault: {msg.get('reason')}")
        return msg

    async def expect(self, kind: str, run: int, pair_id: int) -> dict[str, Any]:
        msg = await self.recv()
        got = msg["kind"]
        if got == "OUTCOME" and msg["pair_id"] >= self.angles_sent:
            raise self.fault(f"out-of-order: OUTCOME for pair {msg['pair_id']} before its ANGLE was sent")
        if got != kind:
            raise self.fault(f"out-of-order: expected {kind}, got {got}")
        if msg["run"] != run or msg["pair_id"] != pair_id:
            raise self.fault(
                f"out-of-order: expected {kind} for run {run} pair {pair_id}, "
                f"got run {msg['run']} pair {msg['pair_id']}"
            )
        return msg

    async def close(self) -> None:
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass


async def _all(*aws):
    """Like ``gather`` but cancels the siblings as soon as one fails."""
    tasks = [asyncio.ensure_future(a) for a in aws]
    try:
        done, pending = await asyncio.wait(tasks, return_when=asyncio.FIRST_EXCEPTION)
        for t in done:
            if t.exception() is not None:
                raise t.exception()
        return [t.result() for t in tasks]
    finally:
        for t in tasks:
            if not t.done():
                t.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)


@dataclass(frozen=True)
class SessionScore:
    runs: tuple[TrialResult, ...]
    pairs: tuple[PairBatch, ...] | None = field(default=None, compare=False, repr=False)

    @property
    def bell_violation_rate(self) -> float:
        return sum(r.bell.violated for r in self.runs) / len(self.runs)

    @property
    def chsh_violation_rate(self) -> float:
        return sum(r.chsh is not None and r.chsh.violated for r in self.runs) / len(self.runs)

    @property
    def chsh_indeterminate(self) -> int:
        return sum(r.chsh is None for r in self.runs)

    @property
    def mean_anticorr_pct(self) -> float:
        audits = [r.anticorr.percent for r in self.runs if r.anticorr is not None]
        return math.fsum(audits) / len(audits) if audits else math.nan

    @property
    def anticorr_perfect_all(self) -> bool:
        return all(r.anticorr is None or r.anticorr.perfect for r in self.runs)

    @property
    def quantum_like(self) -> bool:
        return self.bell_violation_rate >= QUANTUM_LIKE_BELL_RATE and self.anticorr_perfect_all

    @property
    def verdict(self) -> str:
        return "quantum-like" if self.quantum_like else "not quantum-like"

    def summary(self) -> dict[str, Any]:
        return {
            "runs": len(self.runs),
            "bell_violation_rate": self.bell_violation_rate,
            "chsh_violation_rate": self.chsh_violation_rate,
            "chsh_indeterminate": self.chsh_indeterminate,
            "mean_anticorr_pct": self.mean_anticorr_pct,
            "anticorr_perfect_all": self.anticorr_perfect_all,
            "verdict": self.verdict,
        }

    def to_dict(self) -> dict[str, Any]:
        out = self.summary()
        out["per_run"] = [
            {
                "bell": r.bell.to_dict(),
                "S": None if r.chsh is None else r.chsh.s,
                "anticorr_pct": None if r.anticorr is None else r.anticorr.percent,
            }
            for r in self.runs
        ]
        return out


async def _connect(role: str, endpoint: Endpoint, timeout: float, transcript) -> _Station:
    try:
        reader, writer = await asyncio.wait_for(
            asyncio.open_connection(endpoint.host, endpoint.port, limit=wire.MAX_LINE), timeout
        )
    except (OSError, asyncio.TimeoutError) as exc:
        raise ProtocolFault(f"cannot connect to {endpoint}: {exc!r}", role, transcript) from None
    return _Station(role, reader, writer, timeout, transcript)


async def _handshake(st: _Station, cfg: SessionConfig) -> None:
    st.send(wire.hello(st.role, cfg.n, cfg.runs))
    await st.drain()
    msg = await st.recv()
    if msg["kind"] != "HELLO":
        raise st.fault(f"out-of-order: expected HELLO, got {msg['kind']}")
    if msg.get("role") != st.role:
        raise st.fault(f"handshake: station answered as {msg.get('role')!r}")


async def _run_once(src: _Station, alice: _Station, bob: _Station, cfg: SessionConfig, run: int) -> PairBatch:
    n = cfg.n
    stations = (alice, bob)
    for st in stations:
        st.hv_sent = 0
        st.angles_sent = 0

    for j in range(n):
        src.send(wire.prepare(run, j))

    async def forward() -> None:
        await src.drain()
        for j in range(n):
            msg = await src.expect("HV", run, j)
            try:
                payloads = (wire.check_payload(msg.get("alice")), wire.check_payload(msg.get("bob")))
            except wire.MalformedMessage as exc:
                raise src.fault(f"malformed: {exc}") from None
            for st, payload in zip(stations, payloads):
                st.send(wire.hv_to_station(run, j, payload))
                st.hv_sent = j + 1
            if j % 128 == 127:
                await _all(alice.drain(), bob.drain())
        await _all(alice.drain(), bob.drain())

    async def acks(st: _Station) -> None:
        for j in range(n):
            await st.expect("HV_ACK", run, j)
            if j >= st.hv_sent:
                raise st.fault(f"out-of-order: HV_ACK for pair {j} before its HV was sent")

    await _all(forward(), acks(alice), acks(bob))

    # angles exist only once every payload of the run is acknowledged
    a, b = draw_settings(rngmod.substream(cfg.master_seed, n, run, rngmod.SETTINGS), n)

    async def send_angles() -> None:
        for j in range(n):
            alice.send(wire.angle(run, j, int(a[j])))
            alice.angles_sent = j + 1
            bob.send(wire.angle(run, j, int(b[j])))
            bob.angles_sent = j + 1
            if j % 128 == 127:
                await _all(alice.drain(), bob.drain())
        await _all(alice.drain(), bob.drain())

    async def outcomes(st: _Station) -> np.ndarray:
        bits = np.empty(n, dtype=np.int8)
        for j in range(n):
            bits[j] = (await st.expect("OUTCOME", run, j))["bit"]
        return bits

    _, bits_a, bits_b = await _all(send_angles(), outcomes(alice), outcomes(bob))
    return PairBatch(a, b, bits_a, bits_b)


async def referee_session_async(
    cfg: SessionConfig, transcript: Transcript | None = None, keep_pairs: bool = False
) -> SessionScore:
    stations: dict[str, _Station] = {}
    try:
        for role in wire.ROLES:
            stations[role] = await _connect(role, cfg.endpoints[role], cfg.timeout, transcript)
        await _all(*(_handshake(st, cfg) for st in stations.values()))
        results: list[TrialResult] = []
        batches: list[PairBatch] = []
        for run in range(cfg.runs):
            batch = await _run_once(stations["source"], stations["alice"], stations["bob"], cfg, run)
            results.append(score_batch(batch))
            if keep_pairs:
                batches.append(batch)
            for st in stations.values():
                st.send(wire.run_done(run))
        final = SessionScore(tuple(results), tuple(batches) if keep_pairs else None)
        for st in stations.values():
            st.send(wire.score(final.summary()))
            await st.drain()
        return final
    except ProtocolFault as exc:
        exc.transcript = transcript
        for st in stations.values():
            try:
                st.send(wire.fault(exc.reason))
                await asyncio.wait_for(st.writer.drain(), 1.0)
            except Exception:
                pass
        raise
    finally:
        for st in stations.values():
            await st.close()


def referee_session(
    cfg: SessionConfig, transcript: Transcript | None = None, keep_pairs: bool = False
) -> SessionScore:
    return asyncio.run(referee_session_async(cfg, transcript, keep_pairs))


def check_causality(entries: Sequence[dict[str, Any]]) -> None:
    """Assert from a transcript that each HV_ACK precedes the ANGLE of its pair.

    Also checks that angles are only ever sent to alice and bob.
    """
    acked: dict[tuple[str, int, int], int] = {}
    last_t = -1
    for e in entries:
        if e["t_ns"] < last_t:
            raise AssertionError("transcript timestamps are not monotonic")
        last_t = e["t_ns"]
        msg = e["msg"]
        key = (e["peer"], msg.get("run"), msg.get("pair_id"))
        if e["dir"] == "recv" and msg["kind"] == "HV_ACK":
            acked[key] = e["t_ns"]
        elif e["dir"] == "send" and msg["kind"] == "ANGLE":
            if e["peer"] not in wire.STATION_ROLES:
                raise AssertionError(f"ANGLE sent to {e['peer']}")
            # entries are in causal order, so presence means the ack came first
            if key not in acked:
                raise AssertionError(f"ANGLE for {key} sent before its HV_ACK")
