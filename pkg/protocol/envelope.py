"""Routed messages and their mapping onto PUBLISH/MESSAGE frames."""

import re
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .document import Document, encode_document, parse_document
from .errors import ProtocolSyntaxError
from .frames import Command, Frame, check_required

TOPIC_RE = re.compile(r"^[a-z0-9_][a-z0-9_-]*(?:\.[a-z0-9_][a-z0-9_-]*)*$")
CLIENT_ID_RE = re.compile(r"^[a-z0-9][a-z0-9_-]*$")
_MESSAGE_ID_RE = re.compile(r"^(.+):([0-9]+)$")


def is_topic_name(name: str) -> bool:
    return isinstance(name, str) and TOPIC_RE.match(name) is not None


def make_message_id(sender_id: str, sequence: int) -> str:
    return f"{sender_id}:{sequence}"


class Envelope(BaseModel):
    """A routed message: headers plus a document payload."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    topic: str
    message_id: str
    sender_id: str
    message_type: str
    timestamp: int
    correlation_id: Optional[str] = None
    reply_to: Optional[str] = None
    hop_trace: List[str] = Field(default_factory=list)
    payload: Document = Field(default_factory=Document)

    @field_validator("topic")
    @classmethod
    def _topic_name(cls, v: str) -> str:
        if not is_topic_name(v):
            raise ValueError(f"bad topic name {v!r}")
        return v

    @field_validator("reply_to")
    @classmethod
    def _reply_topic(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and not is_topic_name(v):
            raise ValueError(f"bad reply topic {v!r}")
        return v

    @model_validator(mode="after")
    def _identity(self) -> "Envelope":
        match = _MESSAGE_ID_RE.match(self.message_id)
        if not match or match.group(1) != self.sender_id:
            raise ValueError(f"message id {self.message_id!r} is not '<sender_id>:<sequence>'")
        if len(set(self.hop_trace)) != len(self.hop_trace):
            raise ValueError(f"hop trace repeats a broker: {self.hop_trace}")
        if any(not b or "," in b for b in self.hop_trace):
            raise ValueError(f"bad broker id in hop trace: {self.hop_trace}")
        return self

    @property
    def sequence(self) -> int:
        return int(self.message_id.rsplit(":", 1)[1])

    def with_hop(self, broker_id: str) -> "Envelope":
        """Copy with ``broker_id`` appended to the hop trace."""
        return type(self)(**{**dict(self), "hop_trace": [*self.hop_trace, broker_id]})


def envelope_to_frame(env: Envelope, command: Command = Command.PUBLISH,
                      subscription_id: Optional[str] = None) -> Frame:
    headers = {
        "topic": env.topic,
        "message-id": env.message_id,
        "sender-id": env.sender_id,
        "message-type": env.message_type,
        "timestamp": str(env.timestamp),
    }
    if env.correlation_id is not None:
        headers["correlation-id"] = env.correlation_id
    if env.reply_to is not None:
        headers["reply-to"] = env.reply_to
    if env.hop_trace or command is Command.MESSAGE:
        headers["hop-trace"] = ",".join(env.hop_trace)
    if subscription_id is not None:
        headers["subscription-id"] = subscription_id
    return Frame.build(command, headers, encode_document(env.payload))


def frame_to_envelope(frame: Frame) -> Envelope:
    if frame.command not in (Command.PUBLISH, Command.MESSAGE):
        raise ProtocolSyntaxError(f"{frame.command.value} frames carry no envelope")
    check_required(frame.command, frame.headers)
    h = frame.headers
    if not h["timestamp"].lstrip("-").isdigit():
        raise ProtocolSyntaxError(f"bad timestamp {h['timestamp']!r}")
    trace = h.get("hop-trace", "")
    try:
        return Envelope(
            topic=h["topic"],
            message_id=h["message-id"],
            sender_id=h["sender-id"],
            message_type=h["message-type"],
            timestamp=int(h["timestamp"]),
            correlation_id=h.get("correlation-id"),
            reply_to=h.get("reply-to"),
            hop_trace=trace.split(",") if trace else [],
            payload=parse_document(frame.body),
        )
    except ValidationError as e:
        raise ProtocolSyntaxError(f"invalid envelope: {e.errors()[0]['msg']}") from e


def envelope_to_document(env: Envelope) -> Document:
    """Flatten an envelope into one document (used for printing and dlq records)."""
    entries = {
        "topic": env.topic,
        "message_id": env.message_id,
        "sender_id": env.sender_id,
        "message_type": env.message_type,
        "timestamp": env.timestamp,
    }
    if env.correlation_id is not None:
        entries["correlation_id"] = env.correlation_id
    if env.reply_to is not None:
        entries["reply_to"] = env.reply_to
    for index, broker in enumerate(env.hop_trace):
        entries[f"hop_trace.{index}"] = broker
    for path, value in env.payload.items():
        entries[f"payload.{path}"] = value
    return Document(entries)
