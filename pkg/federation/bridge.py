"""The forwarding agent between one local broker and the central broker.

A bridge holds a relay session on each broker. At start it asks both brokers
for their topics (request/reply on ``_sys.topics``), subscribes to every global
topic the rules let through in the matching direction, and republishes what
it receives on the other side with the destination appended to the hop trace.

Acks go back to the source broker only once a message is written to the
destination or parked in the reconnect buffer. When the buffer is full the
message stays unacked and the source broker dead-letters it: the local broker
for upward traffic and the central broker for downward traffic.
"""

import logging
from collections import deque
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Set, Tuple

from broker.engine import INTROSPECTION_TOPIC
from client_sdk.session import AckMode, ClientSession, topics_from_reply
from protocol import Document, Envelope
from protocol.errors import AcwpError, NotConnected

from .rules import Direction, RuleSet, should_forward

logger = logging.getLogger(__name__)

DEFAULT_BRIDGE_BUFFER = 10000

# (kind, direction, envelope); kind is "forward", "buffer" or "overflow"
BridgeObserver = Callable[[str, "Direction", Envelope], None]


def bridge_forward(env: Envelope, destination: str) -> Envelope:
    """The envelope as republished on ``destination``: same ids, topic and payload, one more hop."""
    return env.with_hop(destination)


class BridgeState(str, Enum):
    NEW = "new"
    DISCOVERING = "discovering"
    ACTIVE = "active"
    STOPPED = "stopped"


class BridgeStats:
    def __init__(self):
        self.forwarded: Dict[Direction, int] = {Direction.UP: 0, Direction.DOWN: 0}
        self.suppressed = 0
        self.buffered = 0
        self.overflowed = 0


class Bridge:
    def __init__(
        self,
        local_broker_id: str,
        central_broker_id: str,
        rules: RuleSet,
        local: ClientSession,
        central: ClientSession,
        buffer_limit: int = DEFAULT_BRIDGE_BUFFER,
        observer: Optional[BridgeObserver] = None,
    ):
        self.local_broker_id = local_broker_id
        self.observer = observer
        self.central_broker_id = central_broker_id
        self.rules = rules
        self.local = local
        self.central = central
        for session in (local, central):
            session.ack_mode = AckMode.MANUAL
        self.buffer_limit = buffer_limit
        self.state = BridgeState.NEW
        self.stats = BridgeStats()
        self._buffer: Deque[Tuple[Direction, Envelope, str, str]] = deque()
        self._destination_topics: Dict[Direction, Set[str]] = {Direction.UP: set(), Direction.DOWN: set()}
        self._topics: Dict[Direction, Optional[List[dict]]] = {Direction.UP: None, Direction.DOWN: None}
        self.subscriptions: Dict[Direction, List[str]] = {Direction.UP: [], Direction.DOWN: []}

    def __repr__(self) -> str:
        return f"Bridge({self.local_broker_id} <-> {self.central_broker_id}, {self.state.value})"

    def _source(self, direction: Direction) -> ClientSession:
        return self.local if direction is Direction.UP else self.central

    def _destination(self, direction: Direction) -> ClientSession:
        return self.central if direction is Direction.UP else self.local

    def _destination_id(self, direction: Direction) -> str:
        return self.central_broker_id if direction is Direction.UP else self.local_broker_id

    # --- lifecycle ------------------------------------------------------------------

    def start(self) -> None:
        """Discover topics on both brokers, then subscribe. Sessions must be connected."""
        self.state = BridgeState.DISCOVERING
        for direction in (Direction.UP, Direction.DOWN):
            self._source(direction).request_async(
                INTROSPECTION_TOPIC, "sys.topics.request", Document(),
                on_reply=lambda reply, d=direction: self._on_topics(d, topics_from_reply(reply)),
                on_timeout=lambda _, d=direction: logger.error("bridge %s: topic discovery (%s) timed out",
                                                               self.local_broker_id, d.value),
            )

    def _on_topics(self, source_direction: Direction, rows: List[dict]) -> None:
        self._topics[source_direction] = rows
        if any(t is None for t in self._topics.values()):
            return
        up_rows, down_rows = self._topics[Direction.UP], self._topics[Direction.DOWN]
        self._destination_topics[Direction.UP] = {r["name"] for r in down_rows}
        self._destination_topics[Direction.DOWN] = {r["name"] for r in up_rows}
        for direction, rows in ((Direction.UP, up_rows), (Direction.DOWN, down_rows)):
            for row in rows:
                name = row["name"]
                if row.get("scope") != "global" or not self.rules.allows(name, direction):
                    continue
                if name not in self._destination_topics[direction]:
                    logger.warning("bridge %s: %s is not declared on %s; not forwarded %s",
                                   self.local_broker_id, name, self._destination_id(direction), direction.value)
                    continue
                self._subscribe(direction, name)
        self.state = BridgeState.ACTIVE
        logger.info("bridge %s active: %d up, %d down", self.local_broker_id,
                    len(self.subscriptions[Direction.UP]), len(self.subscriptions[Direction.DOWN]))

    def _subscribe(self, direction: Direction, topic: str) -> None:
        sub_id = f"bridge-{self.local_broker_id}-{direction.value}-{topic}"
        self._source(direction).subscribe(
            topic, lambda env, d=direction, s=sub_id: self._on_message(d, s, env), subscription_id=sub_id)
        self.subscriptions[direction].append(sub_id)

    def stop(self) -> None:
        """Detach: both relay sessions disconnect; buffered messages are discarded."""
        if self.state is BridgeState.STOPPED:
            return
        self.state = BridgeState.STOPPED
        if self._buffer:
            logger.warning("bridge %s stopped with %d buffered messages", self.local_broker_id, len(self._buffer))
        self._buffer.clear()
        self.local.disconnect()
        self.central.disconnect()

    # --- forwarding -----------------------------------------------------------------------

    @property
    def buffered(self) -> int:
        return len(self._buffer)

    def _notify(self, kind: str, direction: Direction, env: Envelope) -> None:
        if self.observer is not None:
            self.observer(kind, direction, env)

    def _on_message(self, direction: Direction, sub_id: str, env: Envelope) -> None:
        source = self._source(direction)
        destination_id = self._destination_id(direction)
        if self.state is BridgeState.STOPPED:
            return
        if not should_forward(env, self.rules, destination_id, direction):
            self.stats.suppressed += 1
            source.ack(sub_id, env.message_id)
            return
        forwarded = bridge_forward(env, destination_id)
        if not self._buffer and self._try_forward(direction, forwarded):
            source.ack(sub_id, env.message_id)
            return
        if len(self._buffer) >= self.buffer_limit:
            self.stats.overflowed += 1
            logger.warning("bridge %s: buffer full (%d); %s left unacked on %s", self.local_broker_id,
                           self.buffer_limit, env.message_id, source.broker_id)
            self._notify("overflow", direction, env)
            return
        self._buffer.append((direction, forwarded, sub_id, env.message_id))
        self.stats.buffered += 1
        self._notify("buffer", direction, forwarded)
        source.ack(sub_id, env.message_id)

    def _try_forward(self, direction: Direction, env: Envelope) -> bool:
        destination = self._destination(direction)
        if not destination.transport.available:
            return False
        try:
            destination.forward(env)
        except NotConnected:
            return False
        except AcwpError as e:
            logger.error("bridge %s: forwarding %s failed: %s", self.local_broker_id, env.message_id, e.message)
            return True
        self.stats.forwarded[direction] += 1
        self._notify("forward", direction, env)
        logger.debug("bridge %s: %s %s %s trace=%s", self.local_broker_id, direction.value, env.topic,
                     env.message_id, ",".join(env.hop_trace))
        return True

    def flush(self) -> int:
        """Forward buffered messages in order while the destination accepts them."""
        sent = 0
        while self._buffer:
            direction, env, _, _ = self._buffer[0]
            if not self._try_forward(direction, env):
                break
            self._buffer.popleft()
            sent += 1
        if sent:
            logger.info("bridge %s: flushed %d buffered messages", self.local_broker_id, sent)
        return sent
