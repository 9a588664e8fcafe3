"""The broker engine: one instance's topics, ownership ACL, subscriptions,
acknowledgements and dead-lettering.

The engine does no I/O. Callers serialize commands into it (the TCP server
under a lock, the simulation from its event loop), ship the deliveries that
``dispatch`` returns and call ``sweep_deadlines`` periodically.
"""

import logging
import time
from typing import Callable, Dict, List, Optional, Set

from protocol import Document, Envelope, SchemaSet, encode_document, parse_schema_set, validate
from protocol.envelope import CLIENT_ID_RE, make_message_id
from protocol.errors import (
    AcwpError,
    AlreadyOwned,
    DuplicateClientId,
    DuplicateSubscription,
    OwnershipViolation,
    SchemaViolation,
    UnknownDomain,
    UnknownMessageType,
    UnknownPending,
    UnknownSubscription,
)

from .models import (
    DEFAULT_ACK_DEADLINE_MS,
    BrokerEvent,
    BrokerStats,
    Delivery,
    DlqReason,
    DlqRecord,
    OwnershipRecord,
    PendingAck,
    Subscription,
    TopicDescriptor,
    TopicKind,
    TopicScope,
    TopicStats,
)
from .topic_registry import TopicRegistry

logger = logging.getLogger(__name__)

INTROSPECTION_TOPIC = "_sys.topics"
REPLY_TOPIC_PREFIX = "_reply"
DLQ_MESSAGE_TYPE = "dlq.record"

BUILTIN_SCHEMAS = parse_schema_set(
    """
message sys.topics.request v1

message sys.topics.reply v1
field broker_id string required
field topics.*.name string required
field topics.*.kind string required enum(plain|contribution|publication|rejection|dead_letter)
field topics.*.scope string required enum(global|local)
field topics.*.ack_deadline_ms int required min=1
field topics.*.domain string optional
field topics.*.published int required
field topics.*.delivered int required
field topics.*.acked int required
field topics.*.dead_lettered int required
field topics.*.dropped int required

message dlq.record v1
field original_topic string required
field original_message_id string required
field original_sender_id string required
field original_message_type string required
field failed_subscription_id string required
field failed_client string required
field reason string required enum(ack_timeout|client_disconnected)
field payload string required
"""
)


def wall_clock_ms() -> int:
    return int(time.time() * 1000)


def reply_topic_for(client_id: str) -> str:
    return f"{REPLY_TOPIC_PREFIX}.{client_id}"


OWNER_SUBSCRIPTION_PREFIX = "own-"


def owner_subscription_id(domain: str) -> str:
    return f"{OWNER_SUBSCRIPTION_PREFIX}{domain}"


def broker_sender_id(broker_id: str) -> str:
    return f"broker@{broker_id}"


class Broker:
    """A single broker instance."""

    def __init__(
        self,
        broker_id: str,
        schemas: Optional[SchemaSet] = None,
        clock: Callable[[], int] = wall_clock_ms,
        strict: bool = True,
        default_ack_deadline_ms: int = DEFAULT_ACK_DEADLINE_MS,
        owners_allowed: bool = True,
        observer: Optional[Callable[[BrokerEvent], None]] = None,
    ):
        self.broker_id = broker_id
        self.sender_id = broker_sender_id(broker_id)
        self.schemas = BUILTIN_SCHEMAS.merge(schemas) if schemas is not None else None
        self.strict = strict
        self.default_ack_deadline_ms = default_ack_deadline_ms
        self.owners_allowed = owners_allowed
        self.clock = clock
        self.observer = observer
        self.registry = TopicRegistry()
        self._owners: Dict[str, str] = {}
        self._clients: Set[str] = set()
        self._relays: Set[str] = set()
        self._subs: Dict[str, Subscription] = {}
        self._topic_subs: Dict[str, List[str]] = {}
        self._stats: Dict[str, TopicStats] = {}
        self._seq = 0
        if self.schemas is None:
            logger.warning("broker %s runs without schemas; payload validation is off", broker_id)

    # --- events -----------------------------------------------------------------

    def _emit(self, kind: str, topic: str = "", message_id: str = "", client: str = "", detail: str = "") -> None:
        logger.debug("[%s] %s topic=%s id=%s client=%s %s", self.broker_id, kind, topic, message_id, client, detail)
        if self.observer is not None:
            self.observer(BrokerEvent(kind=kind, broker_id=self.broker_id, topic=topic,
                                      message_id=message_id, client=client, detail=detail))

    # --- sessions -----------------------------------------------------------------

    def connect(self, client_id: str, relay: bool = False) -> str:
        """Register a client session; returns its reply topic."""
        if not CLIENT_ID_RE.match(client_id):
            raise AcwpError(f"bad client id {client_id!r}")
        if client_id in self._clients:
            raise DuplicateClientId(f"client '{client_id}' is already connected", ref=client_id)
        self._clients.add(client_id)
        if relay:
            self._relays.add(client_id)
        reply = reply_topic_for(client_id)
        self._declare(TopicDescriptor(name=reply, scope=TopicScope.LOCAL,
                                      ack_deadline_ms=self.default_ack_deadline_ms))
        self._emit("connect", client=client_id, detail="relay" if relay else "")
        return reply

    def disconnect(self, client_id: str) -> List[DlqRecord]:
        """End a session; everything in flight to it is dead-lettered. Idempotent."""
        records: List[DlqRecord] = []
        for sub in [s for s in self._subs.values() if s.client == client_id]:
            records.extend(self._drop_subscription(sub))
        if client_id in self._clients:
            self._clients.discard(client_id)
            self._relays.discard(client_id)
            self._emit("disconnect", client=client_id)
        return records

    def is_connected(self, client_id: str) -> bool:
        return client_id in self._clients

    # --- topics and ownership -------------------------------------------------------

    def _declare(self, desc: TopicDescriptor) -> bool:
        created = self.registry.declare(desc)
        if created:
            for name in (desc.name, desc.dlq_name):
                self._stats.setdefault(name, TopicStats())
                self._topic_subs.setdefault(name, [])
            self._emit("declare", topic=desc.name, detail=f"{desc.kind.value}/{desc.scope.value}")
        return created

    def declare_topic(self, desc: TopicDescriptor) -> None:
        self._declare(desc)

    def declare_domain(self, domain: str, ack_deadline_ms: Optional[int] = None) -> List[TopicDescriptor]:
        descriptors = self.registry.declare_domain(domain, ack_deadline_ms or self.default_ack_deadline_ms)
        for desc in descriptors:
            for name in (desc.name, desc.dlq_name):
                self._stats.setdefault(name, TopicStats())
                self._topic_subs.setdefault(name, [])
        self._emit("declare-domain", topic=domain)
        return descriptors

    def owner_of(self, domain: str) -> Optional[OwnershipRecord]:
        owner = self._owners.get(domain)
        return OwnershipRecord(domain=domain, owner_client=owner) if owner is not None else None

    def register_owner(self, client: str, domain: str) -> str:
        """Record ``client`` as the domain owner; returns the implicit contribution subscription id."""
        if not self.registry.has_domain(domain):
            raise UnknownDomain(f"domain '{domain}' is not declared", ref=domain)
        if not self.owners_allowed:
            raise OwnershipViolation(f"domains are owned at the central broker, not {self.broker_id}", ref=domain)
        owner = self._owners.get(domain)
        if owner is not None and owner != client:
            raise AlreadyOwned(f"domain '{domain}' is owned by '{owner}'", ref=domain)
        sub_id = owner_subscription_id(domain)
        topic = f"{domain}.{TopicKind.CONTRIBUTION.value}"
        existing = self._subs.get(sub_id)
        if existing is None:
            self._add_subscription(client, topic, sub_id)
        elif (existing.client, existing.topic) != (client, topic):
            raise DuplicateSubscription(f"subscription id '{sub_id}' is held by '{existing.client}'", ref=sub_id)
        self._owners[domain] = client
        if owner is None:
            self._emit("own", topic=domain, client=client)
        return sub_id

    # --- subscriptions -----------------------------------------------------------------

    def _check_subscribe(self, client: str, desc: TopicDescriptor) -> None:
        if desc.kind is TopicKind.CONTRIBUTION and client not in self._relays:
            owner = self._owners.get(desc.domain)
            if owner != client:
                raise OwnershipViolation(
                    f"only the owner of '{desc.domain}' may subscribe to {desc.name}", ref=desc.name)

    def _add_subscription(self, client: str, topic: str, subscription_id: str) -> Subscription:
        sub = Subscription(id=subscription_id, client=client, topic=topic)
        self._subs[subscription_id] = sub
        self._topic_subs.setdefault(topic, []).append(subscription_id)
        self._emit("subscribe", topic=topic, client=client, detail=subscription_id)
        return sub

    def subscribe(self, client: str, topic: str, subscription_id: str) -> None:
        desc = self.registry.require(topic)
        if subscription_id in self._subs:
            raise DuplicateSubscription(f"subscription id '{subscription_id}' in use", ref=subscription_id)
        if (subscription_id.startswith(OWNER_SUBSCRIPTION_PREFIX)
                and self.registry.has_domain(subscription_id[len(OWNER_SUBSCRIPTION_PREFIX):])):
            raise DuplicateSubscription(f"subscription id '{subscription_id}' is reserved for the domain owner",
                                        ref=subscription_id)
        self._check_subscribe(client, desc)
        self._add_subscription(client, topic, subscription_id)

    def unsubscribe(self, client: str, subscription_id: str) -> List[DlqRecord]:
        sub = self._subs.get(subscription_id)
        if sub is None or sub.client != client:
            raise UnknownSubscription(f"no subscription '{subscription_id}' for '{client}'", ref=subscription_id)
        return self._drop_subscription(sub)

    def _drop_subscription(self, sub: Subscription) -> List[DlqRecord]:
        records = []
        in_flight = [p.envelope for p in sub.pending.values()] + list(sub.outbox)
        sub.pending.clear()
        sub.outbox.clear()
        del self._subs[sub.id]
        self._topic_subs[sub.topic].remove(sub.id)
        for env in in_flight:
            record = self._dead_letter(sub, env, DlqReason.CLIENT_DISCONNECTED)
            if record is not None:
                records.append(record)
        self._emit("unsubscribe", topic=sub.topic, client=sub.client, detail=sub.id)
        return records

    def subscription(self, subscription_id: str) -> Optional[Subscription]:
        return self._subs.get(subscription_id)

    def subscriptions(self, topic: Optional[str] = None) -> List[Subscription]:
        if topic is None:
            return list(self._subs.values())
        return [self._subs[s] for s in self._topic_subs.get(topic, [])]

    # --- publishing ---------------------------------------------------------------------

    def _check_publish(self, client: str, desc: TopicDescriptor, env: Envelope) -> None:
        if env.sender_id != client:
            raise AcwpError(f"sender-id '{env.sender_id}' does not match client '{client}'", ref=env.message_id)
        if desc.kind in (TopicKind.PUBLICATION, TopicKind.REJECTION):
            owner = self._owners.get(desc.domain)
            if owner != client:
                raise OwnershipViolation(
                    f"only the owner of '{desc.domain}' may publish to {desc.name}", ref=env.message_id)
        if desc.kind is TopicKind.DEAD_LETTER:
            raise OwnershipViolation(f"{desc.name} is written by the broker only", ref=env.message_id)

    def check_payload(self, env: Envelope) -> None:
        """Input-channel validation against the broker's schema set."""
        if self.schemas is None:
            return
        if self.schemas.get(env.message_type) is None:
            raise UnknownMessageType(f"unknown message type '{env.message_type}'", ref=env.message_id)
        violations = validate(env.payload, env.message_type, self.schemas, strict=self.strict)
        if violations:
            raise SchemaViolation(violations, ref=env.message_id)

    def publish(self, client: str, env: Envelope) -> Envelope:
        """Accept a message for fan-out and return it as queued.

        Returns as soon as the message is queued; no subscriber is consulted.
        """
        relay = client in self._relays
        if env.topic == INTROSPECTION_TOPIC:
            self._answer_introspection(env)
            return env
        desc = self.registry.require(env.topic)
        if relay:
            if self.broker_id in env.hop_trace[:-1]:
                raise AcwpError(f"loop: {self.broker_id} already in hop trace {env.hop_trace}", ref=env.message_id)
            if not env.hop_trace or env.hop_trace[-1] != self.broker_id:
                env = env.with_hop(self.broker_id)
        else:
            self._check_publish(client, desc, env)
            env = env.model_copy(update={"hop_trace": [self.broker_id]})
        self.check_payload(env)
        self._stats[desc.name].published += 1
        detail = f"corr={env.correlation_id}" if env.correlation_id else ""
        self._emit("publish", topic=desc.name, message_id=env.message_id, client=client, detail=detail)
        self._enqueue(desc, env)
        return env

    def _enqueue(self, desc: TopicDescriptor, env: Envelope) -> None:
        sub_ids = self._topic_subs.get(desc.name, [])
        if not sub_ids:
            self._stats[desc.name].dropped += 1
            self._emit("drop", topic=desc.name, message_id=env.message_id, detail="no subscribers")
            return
        for sub_id in sub_ids:
            self._subs[sub_id].outbox.append(env)

    def _next_message_id(self) -> str:
        self._seq += 1
        return make_message_id(self.sender_id, self._seq)

    def _publish_internal(self, topic: str, message_type: str, payload: Document,
                          correlation_id: Optional[str] = None) -> Envelope:
        desc = self.registry.require(topic)
        env = Envelope(topic=topic, message_id=self._next_message_id(), sender_id=self.sender_id,
                       message_type=message_type, timestamp=self.clock(), correlation_id=correlation_id,
                       hop_trace=[self.broker_id], payload=payload)
        self._stats[desc.name].published += 1
        self._emit("publish", topic=topic, message_id=env.message_id, client=self.sender_id,
                   detail=f"corr={correlation_id}" if correlation_id else "")
        self._enqueue(desc, env)
        return env

    def _answer_introspection(self, request: Envelope) -> None:
        if request.reply_to is None:
            raise AcwpError(f"{INTROSPECTION_TOPIC} requests need a reply-to topic", ref=request.message_id)
        self._publish_internal(request.reply_to, "sys.topics.reply", self.introspect(),
                               correlation_id=request.message_id)

    # --- delivery ---------------------------------------------------------------------

    def dispatch(self) -> List[Delivery]:
        """Move queued messages to their subscribers and start their ack deadlines."""
        now = self.clock()
        deliveries: List[Delivery] = []
        for sub in self._subs.values():
            if not sub.outbox:
                continue
            deadline_ms = self.registry.require(sub.topic).ack_deadline_ms
            while sub.outbox:
                env = sub.outbox.popleft()
                sub.pending[env.message_id] = PendingAck(envelope=env, delivered_at=now, deadline=now + deadline_ms)
                self._stats[sub.topic].delivered += 1
                self._emit("deliver", topic=sub.topic, message_id=env.message_id, client=sub.client, detail=sub.id)
                deliveries.append(Delivery(client=sub.client, subscription_id=sub.id, envelope=env))
        return deliveries

    def ack(self, client: str, subscription_id: str, message_id: str) -> None:
        sub = self._subs.get(subscription_id)
        if sub is None or sub.client != client or message_id not in sub.pending:
            logger.info("[%s] unknown or late ack %s/%s from %s", self.broker_id, subscription_id, message_id, client)
            raise UnknownPending(f"nothing pending for {subscription_id}/{message_id}", ref=message_id)
        del sub.pending[message_id]
        self._stats[sub.topic].acked += 1
        self._emit("ack", topic=sub.topic, message_id=message_id, client=client, detail=subscription_id)

    def sweep_deadlines(self, now: Optional[int] = None) -> List[DlqRecord]:
        """Dead-letter every delivery whose ack deadline passed."""
        now = self.clock() if now is None else now
        records: List[DlqRecord] = []
        for sub in list(self._subs.values()):
            expired = [mid for mid, p in sub.pending.items() if p.deadline < now]
            for message_id in expired:
                pending = sub.pending.pop(message_id)
                record = self._dead_letter(sub, pending.envelope, DlqReason.ACK_TIMEOUT)
                if record is not None:
                    records.append(record)
        return records

    def next_deadline(self) -> Optional[int]:
        deadlines = [p.deadline for s in self._subs.values() for p in s.pending.values()]
        return min(deadlines) if deadlines else None

    def _dead_letter(self, sub: Subscription, env: Envelope, reason: DlqReason) -> Optional[DlqRecord]:
        desc = self.registry.require(sub.topic)
        if desc.kind is TopicKind.DEAD_LETTER:
            logger.warning("[%s] dead-letter delivery %s to %s failed (%s); dropped",
                           self.broker_id, env.message_id, sub.client, reason.value)
            return None
        record = DlqRecord(
            original_topic=env.topic,
            original_message_id=env.message_id,
            original_sender_id=env.sender_id,
            original_message_type=env.message_type,
            failed_subscription_id=sub.id,
            failed_client=sub.client,
            reason=reason,
            payload=encode_document(env.payload).decode("utf-8"),
        )
        self._stats[desc.name].dead_lettered += 1
        self._emit("dead-letter", topic=desc.name, message_id=env.message_id, client=sub.client, detail=reason.value)
        self._publish_internal(desc.dlq_name, DLQ_MESSAGE_TYPE, record.to_document(), correlation_id=env.message_id)
        return record

    # --- introspection ---------------------------------------------------------------------

    def list_topics(self) -> List[TopicDescriptor]:
        return self.registry.get_topic_definitions()

    def stats(self) -> BrokerStats:
        return BrokerStats(broker_id=self.broker_id,
                           topics={name: s.model_copy() for name, s in sorted(self._stats.items())})

    def introspect(self) -> Document:
        stats = self.stats()
        entries: Dict[str, object] = {"broker_id": self.broker_id}
        for index, desc in enumerate(self.list_topics()):
            prefix = f"topics.{index}"
            entries[f"{prefix}.name"] = desc.name
            entries[f"{prefix}.kind"] = desc.kind.value
            entries[f"{prefix}.scope"] = desc.scope.value
            entries[f"{prefix}.ack_deadline_ms"] = desc.ack_deadline_ms
            if desc.domain is not None:
                entries[f"{prefix}.domain"] = desc.domain
            for counter, value in stats.topics.get(desc.name, TopicStats()).model_dump().items():
                entries[f"{prefix}.{counter}"] = value
        return Document(entries)
