"""Contribution and publication flow across live TCP brokers and bridges."""

import socket
import threading
import time

import pytest

from ats_sim.components import FplOwner
from ats_sim.world import DATA_DIR
from broker import Broker, BrokerService, TopicDescriptor, TopicScope
from broker.server import BrokerServer
from client_sdk import connect
from federation import BridgeState
from federation.live import BridgeConfig, start_live_bridge
from protocol import Command, Document, Frame, encode_frame
from shared_utils import Settings, parse_endpoint

CREATE = Document({"callsign": "DLH123", "aircraft_type": "A320", "adep": "EDDF", "ades": "EDDH", "eobt": 540})


def serve(broker_id, schemas, owners_allowed):
    broker = Broker(broker_id, schemas=schemas, default_ack_deadline_ms=2000, owners_allowed=owners_allowed)
    broker.declare_domain("fpl")
    broker.declare_domain("met")
    if not owners_allowed:
        broker.declare_topic(TopicDescriptor(name="selection", scope=TopicScope.LOCAL))
    server = BrokerServer(BrokerService(broker), ("127.0.0.1", 0), sweep_interval_ms=50)
    threading.Thread(target=server.serve, daemon=True).start()
    return server


def wait_until(predicate, timeout_s=5.0):
    deadline = time.monotonic() + timeout_s
    while not predicate():
        if time.monotonic() > deadline:
            return False
        time.sleep(0.01)
    return True


@pytest.fixture
def tower(schemas):
    """Central broker plus two local brokers, each bridged up; yields the endpoints."""
    servers, bridges, sessions = {}, [], []
    try:
        for broker_id, owners in (("central", True), ("cwp1", False), ("cwp2", False)):
            servers[broker_id] = serve(broker_id, schemas, owners)
    except OSError as e:
        for server in servers.values():
            server.stop()
        pytest.skip(f"cannot listen on loopback: {e}")

    for local in ("cwp1", "cwp2"):
        config = BridgeConfig(local_broker_id=local, local_endpoint=servers[local].endpoint,
                              central_endpoint=servers["central"].endpoint, rules=DATA_DIR / "routes.rules")
        bridge = start_live_bridge(config, Settings())
        assert wait_until(lambda: bridge.state is BridgeState.ACTIVE)
        bridge.local.sync()
        bridge.central.sync()
        bridges.append(bridge)

    def session(broker_id, client_id):
        s = connect(servers[broker_id].endpoint, client_id, schemas=schemas)
        sessions.append(s)
        return s

    yield session
    for s in sessions:
        s.disconnect()
    for bridge in bridges:
        bridge.stop()
    for server in servers.values():
        server.stop()


def test_contribution_reaches_owner_and_every_position(tower):
    started = time.monotonic()
    owner = FplOwner(tower("central", "fdps"))
    owner.start()

    received = {"cwp1": [], "cwp2": []}
    for position in received:
        tower(position, position).subscribe("fpl.publication", received[position].append)

    message_id = tower("cwp1", "cwp1-hmi").contribute("fpl", "fpl.create", CREATE)

    assert wait_until(lambda: all(received.values()))
    assert time.monotonic() - started < 5.0
    assert [c.message_id for c in owner.received] == [message_id]
    for position, envelopes in received.items():
        (record,) = envelopes
        assert record.correlation_id == message_id
        assert record.sender_id == "fdps"
        assert record.hop_trace == ["central", position]
        assert record.payload["revision"] == 1


def test_selection_stays_local(tower):
    seen_at_cwp2 = []
    tower("cwp2", "cwp2").subscribe("selection", seen_at_cwp2.append)
    seen_at_cwp1 = []
    cwp1 = tower("cwp1", "cwp1")
    cwp1.subscribe("selection", seen_at_cwp1.append)
    cwp1.publish("selection", "selection.update", Document({"callsign": "DLH123", "position": "cwp1"}))
    assert wait_until(lambda: seen_at_cwp1)
    time.sleep(0.1)
    assert seen_at_cwp2 == []


def test_stalled_subscriber_does_not_hold_up_other_clients():
    broker = Broker("central", default_ack_deadline_ms=300)
    broker.declare_topic(TopicDescriptor(name="bulk", ack_deadline_ms=300))
    broker.declare_topic(TopicDescriptor(name="selection"))
    try:
        server = BrokerServer(BrokerService(broker), ("127.0.0.1", 0), sweep_interval_ms=50)
    except OSError as e:
        pytest.skip(f"cannot listen on loopback: {e}")
    threading.Thread(target=server.serve, daemon=True).start()

    # Subscribes, then never reads: its socket buffers fill up.
    stalled = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    stalled.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4096)
    stalled.connect(parse_endpoint(server.endpoint))
    sessions = []
    try:
        stalled.sendall(encode_frame(Frame.build(Command.CONNECT, {"client-id": "stalled"}))
                        + encode_frame(Frame.build(Command.SUBSCRIBE,
                                                   {"topic": "bulk", "subscription-id": "stalled-bulk"})))
        assert wait_until(lambda: broker.subscription("stalled-bulk") is not None)

        feeder = connect(server.endpoint, "feeder")
        sessions.append(feeder)
        blob = Document({"blob": "x" * 256 * 1024})
        fed = threading.Event()

        def feed():
            for _ in range(64):
                feeder.publish("bulk", "bulk.blob", blob)
            feeder.sync(timeout_ms=10_000)
            fed.set()

        threading.Thread(target=feed, daemon=True).start()
        assert fed.wait(15)

        watcher = connect(server.endpoint, "watcher")
        sessions.append(watcher)
        seen, dead = [], []
        watcher.subscribe("selection", seen.append)
        watcher.subscribe("bulk.dlq", dead.append)
        watcher.publish("selection", "selection.update", Document({"callsign": "DLH123", "position": "cwp1"}))
        watcher.sync()
        assert wait_until(lambda: seen and dead)
        assert dead[0].message_type == "dlq.record"
    finally:
        for s in sessions:
            s.disconnect()
        stalled.close()
        server.stop()
