"""Newline-delimited JSON envelopes exchanged between the referee and stations.

Each message is one JSON object on one line.  Field reference:

=========  ==============  ===================================================
kind       direction       fields
=========  ==============  ===================================================
HELLO      referee->st.    role, n, runs, version
HELLO      st.->referee    role
PREPARE    referee->src    run, pair_id
HV         src->referee    run, pair_id, alice (base64), bob (base64)
HV         referee->st.    run, pair_id, payload (base64)
HV_ACK     st.->referee    run, pair_id
ANGLE      referee->st.    run, pair_id, code
OUTCOME    st.->referee    run, pair_id, bit
RUN_DONE   referee->all    run
SCORE      referee->all    score (object)
FAULT      either          reason
=========  ==============  ===================================================

Payloads are opaque to the referee; it only checks that they are valid
base64 no longer than ``MAX_PAYLOAD`` bytes.
"""

from __future__ import annotations

import base64
import binascii
import json
from typing import Any

VERSION = 1
ROLES = ("source", "alice", "bob")
STATION_ROLES = ("alice", "bob")
KINDS = frozenset(
    {"HELLO", "PREPARE", "HV", "HV_ACK", "ANGLE", "OUTCOME", "RUN_DONE", "SCORE", "FAULT"}
)
MAX_PAYLOAD = 1024
MAX_LINE = 16 * 1024


class MalformedMessage(ValueError):
    """A line that is not a well-formed protocol envelope."""


_ENCODER = json.JSONEncoder(separators=(",", ":"))
_DECODER = json.JSONDecoder()


def encode(msg: dict[str, Any]) -> bytes:
    return (_ENCODER.encode(msg) + "\n").encode()


def _index(msg: dict, key: str) -> int:
    value = msg.get(key)
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise MalformedMessage(f"{msg.get('kind')} needs a non-negative integer {key!r}")
    return value


def decode(line: bytes) -> dict[str, Any]:
    if len(line) > MAX_LINE:
        raise MalformedMessage(f"line of {len(line)} bytes exceeds {MAX_LINE}")
    try:
        msg = _DECODER.decode(line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedMessage(f"not JSON: {exc}") from None
    if not isinstance(msg, dict):
        raise MalformedMessage("envelope must be a JSON object")
    kind = msg.get("kind")
    if kind not in KINDS:
        raise MalformedMessage(f"unknown kind {kind!r}")
    if kind in ("PREPARE", "HV", "HV_ACK", "ANGLE", "OUTCOME"):
        _index(msg, "run")
        _index(msg, "pair_id")
    elif kind == "RUN_DONE":
        _index(msg, "run")
    if kind == "OUTCOME":
        bit = msg.get("bit")
        if isinstance(bit, bool) or bit not in (0, 1):
            raise MalformedMessage("OUTCOME needs bit 0 or 1")
    if kind == "ANGLE":
        _index(msg, "code")
    return msg


def encode_payload(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def check_payload(text: Any) -> str:
    """Validate a payload string without interpreting its bytes."""
    decode_payload(text)
    return text


def decode_payload(text: Any) -> bytes:
    if not isinstance(text, str):
        raise MalformedMessage("payload must be a base64 string")
    try:
        data = base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError):
        raise MalformedMessage("payload is not valid base64") from None
    if len(data) > MAX_PAYLOAD:
        raise MalformedMessage(f"payload of {len(data)} bytes exceeds {MAX_PAYLOAD}")
    return data


def hello(role: str, n: int, runs: int) -> dict[str, Any]:
    return {"kind": "HELLO", "role": role, "n": n, "runs": runs, "version": VERSION}


def prepare(run: int, pair_id: int) -> dict[str, Any]:
    return {"kind": "PREPARE", "run": run, "pair_id": pair_id}


def hv_to_station(run: int, pair_id: int, payload: str) -> dict[str, Any]:
    return {"kind": "HV", "run": run, "pair_id": pair_id, "payload": payload}


def angle(run: int, pair_id: int, code: int) -> dict[str, Any]:
    return {"kind": "ANGLE", "run": run, "pair_id": pair_id, "code": code}


def run_done(run: int) -> dict[str, Any]:
    return {"kind": "RUN_DONE", "run": run}


def score(summary: dict[str, Any]) -> dict[str, Any]:
    return {"kind": "SCORE", "score": summary}


def fault(reason: str) -> dict[str, Any]:
    return {"kind": "FAULT", "reason": reason}
