"""Demo components of the tower system, each a client of the middleware.

They only talk to their ``ClientSession``, so the same classes run inside the
simulation and against live brokers (``acwp owner``).
"""

import logging
from collections import Counter, defaultdict
from typing import Callable, DefaultDict, Dict, List, Optional, Set

from broker.models import DlqRecord, TopicKind
from client_sdk.session import ClientSession, OwnerOutput
from protocol import Document, Envelope

from .flight_plans import (
    FPL_DOMAIN,
    MET_DOMAIN,
    MET_REJECTION_TYPE,
    QNH_TYPE,
    SELECTION_TOPIC,
    SELECTION_TYPE,
    FlightStatus,
    FplState,
    QnhState,
    Replica,
    RejectionReason,
    cwp_apply,
    fpl_owner_apply,
    legacy_agent_translate,
    qnh_source_tick,
)

logger = logging.getLogger(__name__)

# kind, topic, message_id, detail
Emit = Callable[[str, str, str, str], None]


def _quiet(kind: str, topic: str, message_id: str, detail: str) -> None:
    logger.debug("%s %s %s %s", kind, topic, message_id, detail)


class FplOwner:
    """Flight data processing: the single writer of the ``fpl`` domain."""

    def __init__(self, session: ClientSession, emit: Emit = _quiet):
        self.session = session
        self.emit = emit
        self.state = FplState()
        self.received: List[Envelope] = []
        self.outputs: DefaultDict[str, List[str]] = defaultdict(list)

    @property
    def client_id(self) -> str:
        return self.session.client_id

    def start(self) -> None:
        self.session.own_domain(FPL_DOMAIN, self.handle)

    def handle(self, contribution: Envelope) -> List[OwnerOutput]:
        self.received.append(contribution)
        self.state, outputs = fpl_owner_apply(self.state, contribution)
        for output in outputs:
            self.outputs[contribution.message_id].append(output.kind.value)
            detail = output.kind.value
            if output.kind is TopicKind.REJECTION:
                detail += f" {output.payload['reason']}"
            else:
                detail += f" {output.payload['callsign']} rev={output.payload['revision']}"
            self.emit("process", contribution.topic, contribution.message_id, detail)
        return outputs


class QnhSource:
    """Owner of ``met``: periodic QNH publications plus accepted manual overrides."""

    def __init__(self, session: ClientSession, state: Optional[QnhState] = None, ticks: int = 0,
                 emit: Emit = _quiet):
        self.session = session
        self.state = state or QnhState()
        self.ticks_left = ticks
        self.emit = emit
        self.published: List[int] = []

    def start(self) -> None:
        self.session.own_domain(MET_DOMAIN, self.handle)

    def handle(self, contribution: Envelope) -> List[OwnerOutput]:
        if contribution.message_type != QNH_TYPE:
            payload = Document({"contribution_type": contribution.message_type,
                                "reason": RejectionReason.UNSUPPORTED_TYPE.value})
            self.emit("process", contribution.topic, contribution.message_id, "rejection")
            return [OwnerOutput(kind=TopicKind.REJECTION, message_type=MET_REJECTION_TYPE, payload=payload)]
        qnh = contribution.payload["qnh"]
        self.state = self.state.model_copy(update={"value": qnh})
        self.published.append(qnh)
        self.emit("process", contribution.topic, contribution.message_id, f"publication qnh={qnh}")
        return [OwnerOutput(message_type=QNH_TYPE, payload=Document({"qnh": qnh}))]

    def start_ticking(self) -> None:
        if self.ticks_left <= 0:
            return
        transport = self.session.transport
        if self.state.next_due is None:
            self.state = self.state.model_copy(update={"next_due": transport.now_ms() + self.state.period_ms})
        transport.call_later(self.state.next_due - transport.now_ms(), self._tick)

    def _tick(self) -> None:
        self.state, doc = qnh_source_tick(self.state, self.session.transport.now_ms())
        if doc is not None:
            self.ticks_left -= 1
            self.published.append(doc["qnh"])
            self.session.publish(f"{MET_DOMAIN}.{TopicKind.PUBLICATION.value}", QNH_TYPE, doc)
        if self.ticks_left > 0 and self.session.connected:
            self.start_ticking()


class CwpClient:
    """A controller working position: mirrors flight plans and QNH, selects targets.

    Acks are sent by hand so ``withholding`` can simulate a hung display.
    """

    def __init__(self, session: ClientSession, emit: Emit = _quiet):
        self.session = session
        self.emit = emit
        self.replica = Replica()
        self.withholding = False
        self.late = False
        self.subscriptions: Dict[str, str] = {}
        self.contributed: DefaultDict[str, List[str]] = defaultdict(list)
        self.received: DefaultDict[str, List[Envelope]] = defaultdict(list)
        self.selections: List[Envelope] = []
        self.rejections: List[Envelope] = []

    @property
    def client_id(self) -> str:
        return self.session.client_id

    def __repr__(self) -> str:
        return f"CwpClient({self.client_id!r}, {len(self.replica.plans)} plans)"

    def subscribe(self, topic: str) -> str:
        if topic in self.subscriptions:
            return self.subscriptions[topic]
        sub_id = f"{self.client_id}-{topic}"
        self.subscriptions[topic] = sub_id
        self.session.subscribe(topic, lambda env: self._on_message(topic, sub_id, env), subscription_id=sub_id)
        return sub_id

    def subscribe_defaults(self) -> None:
        for topic in ("fpl.publication", "fpl.rejection", "met.publication", SELECTION_TOPIC):
            self.subscribe(topic)

    def _on_message(self, topic: str, sub_id: str, env: Envelope) -> None:
        self.received[topic].append(env)
        if topic.endswith(".publication"):
            before = self.replica
            self.replica = cwp_apply(self.replica, env)
            if self.replica.ignored != before.ignored:
                detail = "stale"
            elif env.message_type == QNH_TYPE:
                detail = f"qnh={self.replica.qnh}"
            else:
                detail = f"{env.payload['callsign']} rev={env.payload['revision']}"
            self.emit("apply", topic, env.message_id, detail)
        elif topic.endswith(".rejection"):
            self.rejections.append(env)
        elif topic == SELECTION_TOPIC:
            self.selections.append(env)
        if not self.withholding:
            self.session.ack(sub_id, env.message_id)

    def contribute(self, domain: str, message_type: str, payload: Document) -> str:
        message_id = self.session.contribute(domain, message_type, payload)
        self.contributed[domain].append(message_id)
        return message_id

    def cwp_select(self, callsign: str, position: Optional[str] = None) -> str:
        """Publish a target selection on this position's local ``selection`` topic."""
        doc = Document({"callsign": callsign, "position": position or self.client_id})
        return self.session.publish(SELECTION_TOPIC, SELECTION_TYPE, doc)


class LegacyAgent:
    """Interface agent translating the fixed-width legacy feed into contributions."""

    def __init__(self, session: ClientSession, emit: Emit = _quiet):
        self.session = session
        self.emit = emit
        self.known: Set[str] = set()
        self.contributed: List[str] = []

    def start(self) -> None:
        self.session.subscribe(f"{FPL_DOMAIN}.{TopicKind.PUBLICATION.value}", self._track)

    def _track(self, env: Envelope) -> None:
        callsign = env.payload.get("callsign")
        if env.payload.get("status") == FlightStatus.CANCELLED.value:
            self.known.discard(callsign)
        elif callsign:
            self.known.add(callsign)

    def feed(self, line: str) -> str:
        """Translate one record and contribute it; raises BadLegacyLine."""
        message_type, payload = legacy_agent_translate(line, self.known)
        message_id = self.session.contribute(FPL_DOMAIN, message_type, payload)
        self.contributed.append(message_id)
        self.emit("translate", f"{FPL_DOMAIN}.contribution", message_id, f"{message_type} {payload['callsign']}")
        return message_id


class RecoveryComponent:
    """Consumes dead-letter topics; logs and counts records per original topic.

    ``redeliver`` decides per record whether to publish the original payload
    again. Redelivery goes through the normal publish path, validation included.
    """

    def __init__(self, session: ClientSession, topics: List[str], emit: Emit = _quiet,
                 redeliver: Optional[Callable[[DlqRecord], bool]] = None):
        self.session = session
        self.topics = list(topics)
        self.emit = emit
        self.redeliver = redeliver
        self.records: List[DlqRecord] = []
        self.counts: Counter = Counter()
        self.redelivered: List[str] = []

    def start(self) -> None:
        for topic in self.topics:
            self.session.subscribe(topic, self._on_record)

    def _on_record(self, env: Envelope) -> None:
        record = DlqRecord.from_document(env.payload)
        self.records.append(record)
        self.counts[record.original_topic] += 1
        logger.info("dead letter: %s to %s (%s)", record.original_message_id, record.failed_client,
                    record.reason.value)
        self.emit("recover", env.topic, record.original_message_id,
                  f"{record.failed_client} {record.reason.value}")
        if self.redeliver is not None and self.redeliver(record):
            message_id = self.session.publish(record.original_topic, record.original_message_type,
                                              record.original_payload())
            self.redelivered.append(message_id)
