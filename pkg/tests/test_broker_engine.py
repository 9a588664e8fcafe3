"""Tests for the broker engine."""

import pytest

from broker import Broker, DlqReason, DlqRecord, TopicDescriptor, TopicKind, TopicScope
from broker.engine import INTROSPECTION_TOPIC, owner_subscription_id
from protocol import Document
from protocol.errors import (
    AcwpError,
    AlreadyDeclared,
    AlreadyOwned,
    DuplicateClientId,
    DuplicateSubscription,
    OwnershipViolation,
    ReservedSuffix,
    SchemaViolation,
    UnknownDomain,
    UnknownMessageType,
    UnknownPending,
    UnknownTopic,
)

from conftest import make_env


@pytest.fixture
def acl_broker(clock):
    """Broker without schemas, with an owner, a plain client and a relay connected."""
    b = Broker("central", clock=clock, default_ack_deadline_ms=500)
    b.declare_domain("fpl")
    b.declare_topic(TopicDescriptor(name="selection"))
    for client, relay in (("fdps", False), ("cwp1", False), ("bridge-cwp1", True)):
        b.connect(client, relay=relay)
    b.register_owner("fdps", "fpl")
    return b


TOPICS = {
    TopicKind.CONTRIBUTION: "fpl.contribution",
    TopicKind.PUBLICATION: "fpl.publication",
    TopicKind.REJECTION: "fpl.rejection",
    TopicKind.DEAD_LETTER: "fpl.publication.dlq",
    TopicKind.PLAIN: "selection",
}

# (role, kind) -> publish allowed, subscribe allowed
ACL = {
    ("owner", TopicKind.CONTRIBUTION): (True, True),
    ("owner", TopicKind.PUBLICATION): (True, True),
    ("owner", TopicKind.REJECTION): (True, True),
    ("owner", TopicKind.DEAD_LETTER): (False, True),
    ("owner", TopicKind.PLAIN): (True, True),
    ("client", TopicKind.CONTRIBUTION): (True, False),
    ("client", TopicKind.PUBLICATION): (False, True),
    ("client", TopicKind.REJECTION): (False, True),
    ("client", TopicKind.DEAD_LETTER): (False, True),
    ("client", TopicKind.PLAIN): (True, True),
    ("relay", TopicKind.CONTRIBUTION): (True, True),
    ("relay", TopicKind.PUBLICATION): (True, True),
    ("relay", TopicKind.REJECTION): (True, True),
    ("relay", TopicKind.DEAD_LETTER): (True, True),
    ("relay", TopicKind.PLAIN): (True, True),
}
ROLE_CLIENT = {"owner": "fdps", "client": "cwp1", "relay": "bridge-cwp1"}


@pytest.mark.parametrize("role,kind", sorted(ACL, key=lambda k: (k[0], k[1].value)))
def test_publish_acl(acl_broker, role, kind):
    client = ROLE_CLIENT[role]
    topic = TOPICS[kind]
    if role == "relay":
        env = make_env(topic, sender="cwp9", hop_trace=["cwp9"])
    else:
        env = make_env(topic, sender=client)
    allowed, _ = ACL[(role, kind)]
    if allowed:
        acl_broker.publish(client, env)
        assert acl_broker.stats().topics[topic].published == 1
    else:
        with pytest.raises(OwnershipViolation):
            acl_broker.publish(client, env)
        assert acl_broker.stats().topics[topic].published == 0


@pytest.mark.parametrize("role,kind", sorted(ACL, key=lambda k: (k[0], k[1].value)))
def test_subscribe_acl(acl_broker, role, kind):
    client = ROLE_CLIENT[role]
    topic = TOPICS[kind]
    _, allowed = ACL[(role, kind)]
    if allowed:
        acl_broker.subscribe(client, topic, f"{client}-test")
        assert acl_broker.subscription(f"{client}-test").topic == topic
    else:
        with pytest.raises(OwnershipViolation):
            acl_broker.subscribe(client, topic, f"{client}-test")


def test_sender_must_be_the_session(acl_broker):
    with pytest.raises(AcwpError):
        acl_broker.publish("cwp1", make_env("fpl.contribution", sender="cwp2"))


def test_owner_gets_implicit_contribution_subscription(acl_broker):
    sub = acl_broker.subscription(owner_subscription_id("fpl"))
    assert sub.client == "fdps"
    assert sub.topic == "fpl.contribution"


def test_owner_of(acl_broker):
    record = acl_broker.owner_of("fpl")
    assert (record.domain, record.owner_client) == ("fpl", "fdps")
    acl_broker.declare_domain("met")
    assert acl_broker.owner_of("met") is None


def test_owner_subscription_id_is_reserved(acl_broker):
    acl_broker.declare_domain("met")
    with pytest.raises(DuplicateSubscription):
        acl_broker.subscribe("cwp1", "selection", "own-met")

    # taken before the domain existed: owning it must not silently reuse it
    acl_broker.subscribe("cwp1", "selection", "own-wx")
    acl_broker.declare_domain("wx")
    with pytest.raises(DuplicateSubscription):
        acl_broker.register_owner("fdps", "wx")
    assert acl_broker.owner_of("wx") is None
    assert acl_broker.subscription("own-wx").client == "cwp1"


def test_second_owner_refused(acl_broker):
    acl_broker.connect("fdps2")
    with pytest.raises(AlreadyOwned):
        acl_broker.register_owner("fdps2", "fpl")
    # re-registering is idempotent for the owner itself
    assert acl_broker.register_owner("fdps", "fpl") == "own-fpl"


def test_owner_of_undeclared_domain(acl_broker):
    with pytest.raises(UnknownDomain):
        acl_broker.register_owner("fdps", "wx")


def test_local_broker_refuses_owners(clock):
    b = Broker("cwp1", clock=clock, owners_allowed=False)
    b.declare_domain("fpl")
    b.connect("fdps")
    with pytest.raises(OwnershipViolation):
        b.register_owner("fdps", "fpl")


def test_publish_stamps_trace_and_queues_without_waiting(broker):
    broker.connect("cwp1")
    broker.connect("cwp2")
    broker.subscribe("cwp2", "fpl.contribution.dlq", "cwp2-dlq")
    queued = broker.publish("cwp1", make_env("fpl.contribution"))
    assert queued.hop_trace == ["central"]
    # no subscriber on the topic itself: counted as dropped, never an error
    assert broker.stats().topics["fpl.contribution"].dropped == 1


def test_fifo_per_subscription(broker):
    broker.connect("cwp1")
    broker.connect("fdps")
    broker.register_owner("fdps", "fpl")
    for seq in range(1, 6):
        broker.publish("cwp1", make_env("fpl.contribution", seq=seq))
    deliveries = broker.dispatch()
    assert [d.envelope.message_id for d in deliveries] == [f"cwp1:{i}" for i in range(1, 6)]
    assert {d.subscription_id for d in deliveries} == {"own-fpl"}


def test_ack_clears_pending(broker):
    broker.connect("cwp1")
    broker.subscribe("cwp1", "fpl.publication.dlq", "s1")
    broker.connect("fdps")
    broker.register_owner("fdps", "fpl")
    broker.publish("cwp1", make_env("fpl.contribution"))
    broker.dispatch()
    broker.ack("fdps", "own-fpl", "cwp1:1")
    assert broker.next_deadline() is None
    assert broker.stats().topics["fpl.contribution"].acked == 1
    with pytest.raises(UnknownPending):
        broker.ack("fdps", "own-fpl", "cwp1:1")


def test_deadline_expiry_dead_letters(broker, clock):
    broker.connect("cwp1")
    broker.connect("fdps")
    broker.connect("recovery")
    broker.register_owner("fdps", "fpl")
    broker.subscribe("recovery", "fpl.contribution.dlq", "rec")
    broker.publish("cwp1", make_env("fpl.contribution"))
    broker.dispatch()
    deadline = broker.next_deadline()
    assert deadline == clock.now + 500
    assert broker.sweep_deadlines(deadline) == []

    records = broker.sweep_deadlines(deadline + 1)
    assert len(records) == 1
    record = records[0]
    assert record.reason is DlqReason.ACK_TIMEOUT
    assert record.failed_client == "fdps"
    assert record.failed_subscription_id == "own-fpl"
    assert record.original_payload() == Document({"callsign": "DLH123"})

    (delivery,) = broker.dispatch()
    assert delivery.client == "recovery"
    env = delivery.envelope
    assert env.topic == "fpl.contribution.dlq"
    assert env.message_type == "dlq.record"
    assert env.sender_id == "broker@central"
    assert env.correlation_id == "cwp1:1"
    assert DlqRecord.from_document(env.payload) == record
    assert broker.stats().topics["fpl.contribution"].dead_lettered == 1


def test_disconnect_dead_letters_pending_and_queued(broker):
    broker.connect("cwp1")
    broker.connect("fdps")
    broker.register_owner("fdps", "fpl")
    broker.publish("cwp1", make_env("fpl.contribution", seq=1))
    broker.dispatch()
    broker.publish("cwp1", make_env("fpl.contribution", seq=2))
    records = broker.disconnect("fdps")
    assert [r.original_message_id for r in records] == ["cwp1:1", "cwp1:2"]
    assert {r.reason for r in records} == {DlqReason.CLIENT_DISCONNECTED}
    assert not broker.is_connected("fdps")
    assert broker.disconnect("fdps") == []


def test_failed_dead_letter_delivery_is_not_dead_lettered_again(broker, clock):
    broker.connect("cwp1")
    broker.connect("fdps")
    broker.connect("recovery")
    broker.register_owner("fdps", "fpl")
    broker.subscribe("recovery", "fpl.contribution.dlq", "rec")
    broker.publish("cwp1", make_env("fpl.contribution"))
    broker.dispatch()
    broker.sweep_deadlines(clock.now + 501)
    broker.dispatch()
    assert broker.sweep_deadlines(clock.now + 2000) == []
    assert broker.stats().topics["fpl.contribution.dlq"].dead_lettered == 0


def test_duplicate_client_and_subscription(broker):
    broker.connect("cwp1")
    with pytest.raises(DuplicateClientId):
        broker.connect("cwp1")
    broker.subscribe("cwp1", "fpl.publication", "s1")
    with pytest.raises(DuplicateSubscription):
        broker.subscribe("cwp1", "fpl.rejection", "s1")


def test_unknown_topic(broker):
    broker.connect("cwp1")
    with pytest.raises(UnknownTopic):
        broker.subscribe("cwp1", "wx.publication", "s1")
    with pytest.raises(UnknownTopic):
        broker.publish("cwp1", make_env("wx.contribution"))


def test_topic_declaration_rules(broker):
    with pytest.raises(ReservedSuffix):
        broker.declare_topic(TopicDescriptor(name="notes.dlq"))
    broker.declare_topic(TopicDescriptor(name="notes"))
    broker.declare_topic(TopicDescriptor(name="notes"))
    with pytest.raises(AlreadyDeclared):
        broker.declare_topic(TopicDescriptor(name="notes", scope=TopicScope.LOCAL))
    assert broker.registry.get("notes.dlq").kind is TopicKind.DEAD_LETTER
    with pytest.raises(AlreadyDeclared):
        broker.declare_domain("fpl")


def test_schema_checked_at_input(broker):
    broker.connect("cwp1")
    with pytest.raises(SchemaViolation) as exc:
        broker.publish("cwp1", make_env("fpl.contribution", message_type="fpl.create",
                                        payload={"callsign": "DLH123"}))
    assert exc.value.ref == "cwp1:1"
    assert {v.path for v in exc.value.violations} == {"aircraft_type", "adep", "ades", "eobt"}
    with pytest.raises(UnknownMessageType):
        broker.publish("cwp1", make_env("fpl.contribution", seq=2, message_type="fpl.teleport"))
    assert broker.stats().topics["fpl.contribution"].published == 0


def test_relay_appends_own_id_and_refuses_loops(broker):
    broker.connect("bridge-cwp1", relay=True)
    queued = broker.publish("bridge-cwp1", make_env("fpl.contribution", hop_trace=["cwp1"]))
    assert queued.hop_trace == ["cwp1", "central"]
    queued = broker.publish("bridge-cwp1", make_env("fpl.contribution", seq=2, hop_trace=["cwp1", "central"]))
    assert queued.hop_trace == ["cwp1", "central"]
    with pytest.raises(AcwpError):
        broker.publish("bridge-cwp1", make_env("fpl.contribution", seq=3, hop_trace=["central", "cwp1"]))


def test_introspection_reply(broker):
    reply_topic = broker.connect("cwp1")
    assert reply_topic == "_reply.cwp1"
    assert broker.registry.get(reply_topic).scope is TopicScope.LOCAL
    broker.subscribe("cwp1", reply_topic, "cwp1-reply")
    request = make_env(INTROSPECTION_TOPIC, message_type="sys.topics.request", payload={}, reply_to=reply_topic)
    broker.publish("cwp1", request)
    (delivery,) = broker.dispatch()
    reply = delivery.envelope
    assert reply.correlation_id == "cwp1:1"
    assert reply.message_type == "sys.topics.reply"
    assert reply.payload["broker_id"] == "central"
    names = [reply.payload[p] for p in reply.payload if p.endswith(".name")]
    assert "fpl.contribution" in names and "fpl.contribution.dlq" in names


def test_introspection_needs_reply_to(broker):
    broker.connect("cwp1")
    with pytest.raises(AcwpError):
        broker.publish("cwp1", make_env(INTROSPECTION_TOPIC, message_type="sys.topics.request", payload={}))


def test_observer_sees_events(schemas, clock):
    seen = []
    b = Broker("central", schemas=schemas, clock=clock, observer=seen.append)
    b.declare_domain("fpl")
    b.connect("cwp1")
    b.publish("cwp1", make_env("fpl.contribution"))
    kinds = [e.kind for e in seen]
    assert kinds[-2:] == ["publish", "drop"]
    assert "connect" in kinds
