"""The simulated tower system: one central broker, a local broker per CWP.

``build_world`` wires brokers, bridges and components onto one
``Simulator``; ``run_scenario`` lets the setup settle, then plays a script
against it and returns the event log. Brokers, bridges and client sessions
are the production classes; only the clock and the transport are simulated.
"""

import logging
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Set

from pydantic import BaseModel, Field

from broker.config import BrokerConfig, BrokerRole, DomainConfig, TopicConfig, build_broker
from broker.models import DEFAULT_ACK_DEADLINE_MS, BrokerEvent, TopicScope
from broker.service import BrokerService
from client_sdk.session import AckMode, ClientSession
from federation import Bridge, Direction, Hierarchy, RuleSet, load_routing_rules
from federation.bridge import DEFAULT_BRIDGE_BUFFER
from protocol import Envelope, SchemaSet, load_schema_files
from protocol.envelope import CLIENT_ID_RE
from protocol.errors import AcwpError, ConfigError, DuplicateBrokerId, ScenarioError
from shared_utils.models import RunSummary
from shared_utils.settings import load_config_document, resolve_relative

from .components import CwpClient, FplOwner, LegacyAgent, QnhSource, RecoveryComponent
from .event_log import EventLog
from .flight_plans import FPL_DOMAIN, MET_DOMAIN, SELECTION_TOPIC, QnhState
from .network import Link, LinkModel, Simulator, SimTransport
from .scenario import ScenarioAction, ScenarioScript, parse_arguments, unquote

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
CENTRAL_ID = "central"
OWNER_ID = "fdps"
QNH_ID = "metsrc"
LEGACY_ID = "ifagent"
RECOVERY_ID = "recovery"


class QnhConfig(BaseModel):
    period_ms: int = Field(default=60000, gt=0)
    ticks: int = Field(default=0, ge=0)
    start: int = Field(default=1013, ge=900, le=1100)


class WorldConfig(BaseModel):
    """World config file (Document grammar).

    Example::

        cwps = 3
        latency_ms = 5
        jitter_ms = 3
        passive.0 = "cwp3"
        qnh.ticks = 2
    """

    cwps: int = Field(default=2, ge=0)
    locals: List[str] = Field(default_factory=list, description="Explicit local broker ids; overrides cwps")
    latency_ms: int = Field(default=5, ge=0)
    jitter_ms: int = Field(default=0, ge=0)
    drop_probability: float = Field(default=0.0, ge=0.0, le=1.0)
    ack_deadline_ms: int = Field(default=DEFAULT_ACK_DEADLINE_MS, gt=0)
    max_time_ms: int = Field(default=3_600_000, gt=0)
    schemas: List[Path] = Field(default_factory=list)
    rules: Optional[Path] = None
    passive: List[str] = Field(default_factory=list, description="CWPs that do not subscribe at setup")
    qnh: QnhConfig = Field(default_factory=QnhConfig)
    legacy_agent: bool = True
    recovery: bool = True
    recovery_topics: List[str] = Field(default_factory=lambda: [
        "fpl.contribution.dlq", "fpl.publication.dlq", "fpl.rejection.dlq", "met.publication.dlq"])
    bridge_buffer: int = Field(default=DEFAULT_BRIDGE_BUFFER, gt=0)

    @property
    def local_ids(self) -> List[str]:
        return list(self.locals) if self.locals else [f"cwp{i}" for i in range(1, self.cwps + 1)]


def load_world_config(path: Path) -> WorldConfig:
    config = load_config_document(path, WorldConfig)
    update = {"schemas": resolve_relative(Path(path), config.schemas)}
    if config.rules is not None:
        update["rules"] = resolve_relative(Path(path), [config.rules])[0]
    return config.model_copy(update=update)


def check_world_config(config: WorldConfig) -> None:
    seen: Set[str] = {CENTRAL_ID}
    for index, broker_id in enumerate(config.local_ids):
        if not CLIENT_ID_RE.match(broker_id):
            raise ConfigError(f"bad broker id {broker_id!r}", location=f"locals.{index}")
        if broker_id in seen:
            raise ConfigError(f"duplicate broker id '{broker_id}'", location=f"locals.{index}")
        seen.add(broker_id)
    for index, name in enumerate(config.passive):
        if name not in seen:
            raise ConfigError(f"passive position '{name}' is not a local broker", location=f"passive.{index}")


class SimWorld:
    def __init__(self, config: WorldConfig, seed: int, schemas: SchemaSet, rules: RuleSet):
        self.config = config
        self.seed = seed
        self.schemas = schemas
        self.rules = rules
        self.sim = Simulator(seed)
        self.log = EventLog()
        self.link_model = LinkModel(latency_ms=config.latency_ms, jitter_ms=config.jitter_ms,
                                    drop_probability=config.drop_probability)
        self.services: Dict[str, BrokerService] = {}
        self.links: Dict[str, Link] = {}
        self.sessions: Dict[str, ClientSession] = {}
        self.hierarchy = Hierarchy(CENTRAL_ID)
        self.cwps: Dict[str, CwpClient] = {}
        self.owner: Optional[FplOwner] = None
        self.qnh: Optional[QnhSource] = None
        self.legacy: Optional[LegacyAgent] = None
        self.recovery: Optional[RecoveryComponent] = None
        self._sweeps: Dict[str, Set[int]] = {}
        self.started_at: Optional[int] = None

    def __repr__(self) -> str:
        return f"SimWorld(seed={self.seed}, brokers={list(self.services)}, t={self.sim.now})"

    @property
    def now(self) -> int:
        return self.sim.now

    # --- wiring -----------------------------------------------------------------------

    def _add_broker(self, broker_id: str, role: BrokerRole) -> BrokerService:
        config = BrokerConfig(
            broker_id=broker_id,
            role=role,
            ack_deadline_ms=self.config.ack_deadline_ms,
            domains=[DomainConfig(name=FPL_DOMAIN), DomainConfig(name=MET_DOMAIN)],
            topics=[TopicConfig(name=SELECTION_TOPIC, scope=TopicScope.LOCAL)],
        )
        broker = build_broker(config, schemas=self.schemas, clock=self.sim.clock, observer=self._on_broker_event)
        service = BrokerService(broker)
        self.services[broker_id] = service
        self._sweeps[broker_id] = set()
        return service

    def _on_broker_event(self, event: BrokerEvent) -> None:
        self.log.record_event(self.sim.now, event)
        if event.kind == "deliver":
            broker = self.services[event.broker_id].broker
            when = self.sim.now + broker.registry.require(event.topic).ack_deadline_ms + 1
            pending = self._sweeps[event.broker_id]
            if when not in pending:
                pending.add(when)
                self.sim.at(when, partial(self._sweep, event.broker_id, when))

    def _sweep(self, broker_id: str, when: int) -> None:
        self._sweeps[broker_id].discard(when)
        self.services[broker_id].sweep(when)

    def session(self, client_id: str, broker_id: str, **kwargs) -> ClientSession:
        """Connect a new client session to ``broker_id`` over its own link."""
        link = Link(self.sim, f"{client_id}@{broker_id}", self.link_model)
        self.links[link.name] = link
        transport = SimTransport(self.sim, link, self.services[broker_id])
        session = ClientSession(client_id, transport, schemas=self.schemas,
                                on_error=partial(self._client_error, client_id, broker_id), **kwargs)
        self.sessions[link.name] = session
        return session.connect()

    def _client_error(self, client_id: str, broker_id: str, err: AcwpError) -> None:
        self.log.record(self.sim.now, broker_id, "error", message_id=err.ref or "", client=client_id,
                        detail=f"{err.code} {err.message}")

    def _emitter(self, client_id: str, broker_id: str) -> Callable[[str, str, str, str], None]:
        def emit(kind: str, topic: str, message_id: str, detail: str) -> None:
            self.log.record(self.sim.now, broker_id, kind, topic, message_id, client_id, detail)
        return emit

    def add_local_broker(self, broker_id: str, late: bool = False) -> CwpClient:
        """Local broker, its bridge to the centre and its CWP client."""
        if broker_id == CENTRAL_ID or broker_id in self.services:
            raise DuplicateBrokerId(f"broker id '{broker_id}' is already part of the hierarchy", ref=broker_id)
        self._add_broker(broker_id, BrokerRole.LOCAL)
        relay_id = f"bridge-{broker_id}"
        local = self.session(relay_id, broker_id, relay=True, ack_mode=AckMode.MANUAL)
        central = self.session(relay_id, CENTRAL_ID, relay=True, ack_mode=AckMode.MANUAL)
        bridge = Bridge(broker_id, CENTRAL_ID, self.rules, local, central,
                        buffer_limit=self.config.bridge_buffer,
                        observer=partial(self._on_bridge_event, broker_id))
        self.hierarchy.attach_local_broker(bridge, start=False)
        waiting = [local, central]

        def ready(session: ClientSession) -> None:
            waiting.remove(session)
            if not waiting:
                bridge.start()

        local.when_connected(partial(ready, local))
        central.when_connected(partial(ready, central))

        cwp = CwpClient(self.session(broker_id, broker_id, ack_mode=AckMode.MANUAL),
                        emit=self._emitter(broker_id, broker_id))
        cwp.late = late
        if broker_id not in self.config.passive:
            cwp.subscribe_defaults()
        self.cwps[broker_id] = cwp
        return cwp

    def _on_bridge_event(self, broker_id: str, kind: str, direction: Direction, env: Envelope) -> None:
        destination = CENTRAL_ID if direction is Direction.UP else broker_id
        self.log.record(self.sim.now, destination, kind, env.topic, env.message_id, f"bridge-{broker_id}",
                        f"{direction.value} trace={','.join(env.hop_trace)}")

    def uplink(self, broker_id: str) -> Link:
        link = self.links.get(f"bridge-{broker_id}@{CENTRAL_ID}")
        if link is None:
            raise ScenarioError(f"no local broker '{broker_id}'")
        return link

    # --- running ----------------------------------------------------------------------

    def settle(self) -> int:
        """Run until nothing is scheduled (or the time limit)."""
        return self.sim.run(self.config.max_time_ms if self.started_at is None
                            else self.started_at + self.config.max_time_ms)

    def quiescent(self) -> bool:
        return self.sim.idle

    def component(self, name: str):
        for candidate in (self.cwps.get(name), self.owner, self.qnh, self.legacy, self.recovery):
            if candidate is not None and candidate.session.client_id == name:
                return candidate
        return None

    def broker_of(self, name: str) -> str:
        if name in self.cwps or name in self.services:
            return name
        return CENTRAL_ID

    def perform(self, action: ScenarioAction) -> None:
        handler = getattr(self, f"_do_{action.action}")
        try:
            handler(action)
        except (AcwpError, ValueError, KeyError) as e:
            code = getattr(e, "code", type(e).__name__)
            message = getattr(e, "message", str(e))
            logger.info("line %d: %s %s failed: %s", action.line, action.actor, action.action, message)
            self.log.record(self.sim.now, self.broker_of(action.actor), "error",
                            message_id=getattr(e, "ref", None) or "", client=action.actor,
                            detail=f"line {action.line}: {code} {message}")

    def _require(self, action: ScenarioAction):
        component = self.component(action.actor)
        if component is None:
            raise ScenarioError(f"unknown actor '{action.actor}'", action.line)
        return component

    def _require_cwp(self, action: ScenarioAction) -> CwpClient:
        cwp = self.cwps.get(action.actor)
        if cwp is None:
            raise ScenarioError(f"'{action.actor}' is not a CWP", action.line)
        return cwp

    def _do_contribute(self, action: ScenarioAction) -> None:
        domain, message_type = action.args[:2]
        payload = parse_arguments(action.args[2:], action.line)
        component = self._require(action)
        if isinstance(component, CwpClient):
            component.contribute(domain, message_type, payload)
        else:
            component.session.contribute(domain, message_type, payload)

    def _do_publish(self, action: ScenarioAction) -> None:
        topic, message_type = action.args[:2]
        self._require(action).session.publish(topic, message_type, parse_arguments(action.args[2:], action.line))

    def _do_subscribe(self, action: ScenarioAction) -> None:
        cwp = self._require_cwp(action)
        topic = action.args[0]
        if topic.endswith(".publication") and topic not in cwp.subscriptions:
            cwp.late = True
        cwp.subscribe(topic)

    def _do_withhold_ack(self, action: ScenarioAction) -> None:
        mode = action.args[0] if action.args else "on"
        if mode not in ("on", "off"):
            raise ScenarioError(f"withhold_ack takes on|off, not {mode!r}", action.line)
        self._require_cwp(action).withholding = mode == "on"

    def _do_disconnect(self, action: ScenarioAction) -> None:
        self._require(action).session.disconnect()

    def _do_attach_broker(self, action: ScenarioAction) -> None:
        broker_id = action.args[0]
        self.add_local_broker(broker_id, late=True)
        self.log.record(self.sim.now, CENTRAL_ID, "attach", client=f"bridge-{broker_id}", detail=broker_id)

    def _do_detach_broker(self, action: ScenarioAction) -> None:
        broker_id = action.args[0]
        if self.hierarchy.detach_local_broker(broker_id) is None:
            raise ScenarioError(f"no attached broker '{broker_id}'", action.line)
        self.log.record(self.sim.now, CENTRAL_ID, "detach", client=f"bridge-{broker_id}", detail=broker_id)

    def _do_partition(self, action: ScenarioAction) -> None:
        self.uplink(action.actor).partition()
        self.log.record(self.sim.now, action.actor, "partition", client=f"bridge-{action.actor}")

    def _do_heal(self, action: ScenarioAction) -> None:
        self.uplink(action.actor).heal()
        self.log.record(self.sim.now, action.actor, "heal", client=f"bridge-{action.actor}")
        bridge = self.hierarchy.bridge(action.actor)
        if bridge is not None:
            bridge.flush()

    def _do_select(self, action: ScenarioAction) -> None:
        self._require_cwp(action).cwp_select(*action.args)

    def _do_legacy(self, action: ScenarioAction) -> None:
        if self.legacy is None or self.legacy.session.client_id != action.actor:
            raise ScenarioError(f"'{action.actor}' is not the legacy interface agent", action.line)
        self.legacy.feed(unquote(action.args[0], action.line))

    def _do_request(self, action: ScenarioAction) -> None:
        topic, message_type = action.args[:2]
        component = self._require(action)
        broker_id = self.broker_of(action.actor)

        def on_reply(reply: Envelope) -> None:
            self.log.record(self.sim.now, broker_id, "reply", reply.topic, reply.message_id, action.actor,
                            f"corr={reply.correlation_id}")

        def on_timeout(correlation_id: str) -> None:
            self.log.record(self.sim.now, broker_id, "timeout", topic, correlation_id, action.actor)

        component.session.request_async(topic, message_type, parse_arguments(action.args[2:], action.line),
                                        on_reply=on_reply, on_timeout=on_timeout)

    def summary(self) -> RunSummary:
        counts = self.log.counts()
        return RunSummary(seed=self.seed, final_time_ms=self.sim.now, events=len(self.log),
                          event_counts=counts, dead_lettered=counts.get("dead-letter", 0))


def build_world(config: WorldConfig, seed: int = 0, schemas: Optional[SchemaSet] = None,
                rules: Optional[RuleSet] = None) -> SimWorld:
    """Instantiate brokers, bridges and components; nothing is delivered until the world runs."""
    check_world_config(config)
    if schemas is None:
        try:
            schemas = load_schema_files(config.schemas or [DATA_DIR])
        except OSError as e:
            raise ConfigError(f"cannot read schemas: {e}", location="schemas") from e
    if rules is None:
        rules_path = config.rules or DATA_DIR / "routes.rules"
        try:
            rules = load_routing_rules(Path(rules_path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read rules: {e.strerror}", location=str(rules_path)) from e
        except AcwpError as e:
            raise ConfigError(e.message, location=str(rules_path)) from e

    world = SimWorld(config, seed, schemas, rules)
    world._add_broker(CENTRAL_ID, BrokerRole.CENTRAL)

    world.owner = FplOwner(world.session(OWNER_ID, CENTRAL_ID), emit=world._emitter(OWNER_ID, CENTRAL_ID))
    world.owner.start()
    qnh_state = QnhState(seed=seed, period_ms=config.qnh.period_ms, value=config.qnh.start)
    world.qnh = QnhSource(world.session(QNH_ID, CENTRAL_ID), qnh_state, ticks=config.qnh.ticks,
                          emit=world._emitter(QNH_ID, CENTRAL_ID))
    world.qnh.start()
    if config.legacy_agent:
        world.legacy = LegacyAgent(world.session(LEGACY_ID, CENTRAL_ID), emit=world._emitter(LEGACY_ID, CENTRAL_ID))
        world.legacy.start()
    if config.recovery:
        world.recovery = RecoveryComponent(world.session(RECOVERY_ID, CENTRAL_ID), config.recovery_topics,
                                           emit=world._emitter(RECOVERY_ID, CENTRAL_ID))
        world.recovery.start()

    for broker_id in config.local_ids:
        world.add_local_broker(broker_id)
    logger.info("world: central + %d local brokers, seed %d", len(config.local_ids), seed)
    return world


def run_scenario(world: SimWorld, script: ScenarioScript) -> EventLog:
    """Settle the setup, play ``script`` from the settled time, run to quiescence."""
    if world.started_at is None:
        world.settle()
        world.started_at = world.sim.now
        world.qnh.start_ticking()
    t0 = world.started_at
    for action in script.actions:
        world.sim.at(t0 + action.at_ms, partial(world.perform, action))
    world.settle()
    return world.log
