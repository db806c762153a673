"""Locality-enforcing challenge sessions: a referee and three isolated stations."""

from .referee import (
    Endpoint,
    ProtocolFault,
    SessionConfig,
    SessionScore,
    Transcript,
    check_causality,
    referee_session,
)
from .station import NotChallengeable, check_challengeable, spawn_builtin_stations

__all__ = [
    "Endpoint",
    "NotChallengeable",
    "ProtocolFault",
    "SessionConfig",
    "SessionScore",
    "Transcript",
    "check_causality",
    "check_challengeable",
    "referee_session",
    "spawn_builtin_stations",
]
