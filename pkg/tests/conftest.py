"""Pytest configuration and shared fixtures."""

import sys
from pathlib import Path

import pytest

# Add parent directory to path so we can import our modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from ats_sim.world import DATA_DIR  # noqa: E402
from broker import Broker, BrokerService  # noqa: E402
from client_sdk import AckMode, ClientSession, LoopbackHub, LoopbackTransport  # noqa: E402
from protocol import Document, Envelope, load_schema_files  # noqa: E402
from protocol.envelope import make_message_id  # noqa: E402

REPO_ROOT = Path(__file__).parent.parent
SCENARIO_DIR = REPO_ROOT / "scenarios"


@pytest.fixture(autouse=True)
def setup_environment(monkeypatch):
    """Keep tests independent of a developer's .env."""
    for name in ("ACWP_SCHEMA_PATH", "ACWP_DEBUG", "ACWP_VERBOSE"):
        monkeypatch.delenv(name, raising=False)
    yield


@pytest.fixture(scope="session")
def schemas():
    """The bundled tower message schemas."""
    return load_schema_files([DATA_DIR])


class FakeClock:
    """Manually advanced millisecond clock."""

    def __init__(self, now: int = 1000):
        self.now = now

    def __call__(self) -> int:
        return self.now

    def advance(self, ms: int) -> int:
        self.now += ms
        return self.now


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def broker(schemas, clock):
    """A central broker with the fpl and met domains declared."""
    b = Broker("central", schemas=schemas, clock=clock, default_ack_deadline_ms=500)
    b.declare_domain("fpl")
    b.declare_domain("met")
    return b


def make_env(topic: str, sender: str = "cwp1", seq: int = 1, message_type: str = "fpl.delete",
             payload=None, **kwargs) -> Envelope:
    """Envelope with a valid message id for ``sender``."""
    return Envelope(
        topic=topic,
        message_id=make_message_id(sender, seq),
        sender_id=sender,
        message_type=message_type,
        timestamp=kwargs.pop("timestamp", 1000),
        payload=Document(payload if payload is not None else {"callsign": "DLH123"}),
        **kwargs,
    )


class Loopback:
    """One in-process broker plus helpers to open sessions against it."""

    def __init__(self, schemas, broker_id: str = "central", owners_allowed: bool = True):
        self.hub = LoopbackHub(start_ms=1000)
        self.broker = Broker(broker_id, schemas=schemas, clock=self.hub.clock, default_ack_deadline_ms=500,
                             owners_allowed=owners_allowed)
        self.broker.declare_domain("fpl")
        self.broker.declare_domain("met")
        self.service = BrokerService(self.broker)
        self.errors = []

    def session(self, client_id: str, ack_mode: AckMode = AckMode.AUTO, **kwargs) -> ClientSession:
        kwargs.setdefault("on_error", self.errors.append)
        kwargs.setdefault("schemas", self.broker.schemas)
        return ClientSession(client_id, LoopbackTransport(self.hub, self.service), ack_mode=ack_mode,
                             **kwargs).connect()

    def advance(self, ms: int) -> None:
        """Move virtual time and run the ack deadline sweep."""
        self.hub.advance(ms)
        self.service.sweep(self.hub.now)
        self.hub.run()


@pytest.fixture
def loopback(schemas):
    return Loopback(schemas)
