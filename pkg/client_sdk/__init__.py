"""Client library: sessions, owners, request/reply."""

from .session import (
    AckMode,
    ClientSession,
    ContributionHandler,
    OwnerOutput,
    SessionState,
    connect,
    fetch_topics,
    topics_from_reply,
)
from .transport import Completion, LoopbackHub, LoopbackTransport, TcpTransport, Transport

__all__ = [
    "AckMode",
    "ClientSession",
    "ContributionHandler",
    "OwnerOutput",
    "SessionState",
    "connect",
    "fetch_topics",
    "topics_from_reply",
    "Completion",
    "LoopbackHub",
    "LoopbackTransport",
    "TcpTransport",
    "Transport",
]
