"""Shared data models for the broker engine, its registry and its clients.

Kept apart from the engine so the registry, the session service and the
federation code can import them without circular imports.
"""

from collections import OrderedDict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from protocol import Document, Envelope, parse_document
from protocol.envelope import is_topic_name

DLQ_SUFFIX = ".dlq"
DEFAULT_ACK_DEADLINE_MS = 2000


class TopicKind(str, Enum):
    PLAIN = "plain"
    CONTRIBUTION = "contribution"
    PUBLICATION = "publication"
    REJECTION = "rejection"
    DEAD_LETTER = "dead_letter"


class TopicScope(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"


DOMAIN_KINDS = (TopicKind.CONTRIBUTION, TopicKind.PUBLICATION, TopicKind.REJECTION)


class TopicDescriptor(BaseModel):
    """A declared topic.

    Contribution, publication and rejection topics belong to a data domain and
    are named ``<domain>.<kind>``.
    """

    model_config = ConfigDict(frozen=True)

    name: str = Field(description="Dot-separated lowercase topic name")
    kind: TopicKind = TopicKind.PLAIN
    scope: TopicScope = TopicScope.GLOBAL
    ack_deadline_ms: int = Field(default=DEFAULT_ACK_DEADLINE_MS, gt=0)
    domain: Optional[str] = None

    @model_validator(mode="after")
    def _naming(self) -> "TopicDescriptor":
        if not is_topic_name(self.name):
            raise ValueError(f"bad topic name {self.name!r}")
        if self.kind in DOMAIN_KINDS:
            if self.domain is None or self.name != f"{self.domain}.{self.kind.value}":
                raise ValueError(f"{self.kind.value} topic must be named '<domain>.{self.kind.value}'")
        elif self.kind is TopicKind.PLAIN and self.domain is not None:
            raise ValueError("plain topics have no domain")
        return self

    @property
    def dlq_name(self) -> str:
        return self.name + DLQ_SUFFIX

    def dead_letter_sibling(self) -> "TopicDescriptor":
        return TopicDescriptor(
            name=self.dlq_name,
            kind=TopicKind.DEAD_LETTER,
            scope=self.scope,
            ack_deadline_ms=self.ack_deadline_ms,
            domain=self.domain,
        )


class OwnershipRecord(BaseModel):
    domain: str
    owner_client: str


class DlqReason(str, Enum):
    ACK_TIMEOUT = "ack_timeout"
    CLIENT_DISCONNECTED = "client_disconnected"


class DlqRecord(BaseModel):
    """A failed (message, subscription) delivery, published on ``<topic>.dlq``."""

    original_topic: str
    original_message_id: str
    original_sender_id: str
    original_message_type: str
    failed_subscription_id: str
    failed_client: str
    reason: DlqReason
    payload: str = Field(default="", description="Canonical text of the original payload")

    def to_document(self) -> Document:
        return Document(
            {
                "failed_client": self.failed_client,
                "failed_subscription_id": self.failed_subscription_id,
                "original_message_id": self.original_message_id,
                "original_message_type": self.original_message_type,
                "original_sender_id": self.original_sender_id,
                "original_topic": self.original_topic,
                "payload": self.payload,
                "reason": self.reason.value,
            }
        )

    @classmethod
    def from_document(cls, doc: Document) -> "DlqRecord":
        return cls(**doc.to_dict())

    def original_payload(self) -> Document:
        return parse_document(self.payload)


@dataclass
class PendingAck:
    envelope: Envelope
    delivered_at: int
    deadline: int


@dataclass
class Subscription:
    """An active subscription; ``outbox`` holds queued, ``pending`` delivered-but-unacked messages."""

    id: str
    client: str
    topic: str
    outbox: Deque[Envelope] = field(default_factory=deque)
    pending: "OrderedDict[str, PendingAck]" = field(default_factory=OrderedDict)


@dataclass(frozen=True)
class Delivery:
    """One MESSAGE to hand to a subscriber session."""

    client: str
    subscription_id: str
    envelope: Envelope


class TopicStats(BaseModel):
    published: int = 0
    delivered: int = 0
    acked: int = 0
    dead_lettered: int = 0
    dropped: int = 0


class BrokerStats(BaseModel):
    broker_id: str
    topics: Dict[str, TopicStats] = Field(default_factory=dict)


class BrokerEvent(BaseModel):
    """Observable engine event (logged live, recorded by the simulation)."""

    kind: str
    broker_id: str
    topic: str = ""
    message_id: str = ""
    client: str = ""
    detail: str = ""


def topic_table(descriptors: List[TopicDescriptor], stats: BrokerStats) -> List[dict]:
    """Rows combining descriptors and counters (for tabular output)."""
    rows = []
    for d in descriptors:
        counters = stats.topics.get(d.name, TopicStats())
        rows.append({"name": d.name, "kind": d.kind.value, "scope": d.scope.value,
                     "ack_deadline_ms": d.ack_deadline_ms, **counters.model_dump()})
    return rows
