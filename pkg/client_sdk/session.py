"""ClientSession: the component-facing API of the middleware.

Publishing validates the document against the session's schema set before a
byte is written and returns once the frame is handed to the transport; nothing
waits for subscribers. Broker refusals of a publish arrive later as ERROR
frames and go to ``on_error``.

On transports that can block (TCP, loopback) ``connect``, ``subscribe``,
``own_domain`` and ``request`` wait for the broker's answer and raise its
error. On the simulation transport they return immediately and errors go to
``on_error`` as well.
"""

import itertools
import logging
import threading
from enum import Enum
from typing import Callable, Dict, List, Optional, Protocol

from pydantic import BaseModel, ConfigDict

from broker.engine import BUILTIN_SCHEMAS, INTROSPECTION_TOPIC, owner_subscription_id
from broker.models import TopicKind
from protocol import Command, Document, Envelope, Frame, SchemaSet, envelope_to_frame, frame_to_envelope, validate
from protocol.envelope import make_message_id
from protocol.errors import (
    AcwpError,
    NotConnected,
    RequestTimeout,
    SchemaViolation,
    UnknownMessageType,
    from_code,
)
from protocol.schema import ViolationKind
from shared_utils.settings import nest_document

from .transport import Completion, TcpTransport, Transport

logger = logging.getLogger(__name__)

DEFAULT_REQUEST_TIMEOUT_MS = 5000
REPLY_SUBSCRIPTION = "reply"

MessageHandler = Callable[[Envelope], None]
ErrorHandler = Callable[[AcwpError], None]


class AckMode(str, Enum):
    AUTO = "auto"
    MANUAL = "manual"


class SessionState(str, Enum):
    NEW = "new"
    CONNECTING = "connecting"
    CONNECTED = "connected"
    CLOSED = "closed"


class OwnerOutput(BaseModel):
    """One message an owner publishes in answer to a contribution."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: TopicKind = TopicKind.PUBLICATION
    message_type: str
    payload: Document


class ContributionHandler(Protocol):
    def __call__(self, contribution: Envelope) -> List[OwnerOutput]: ...


class _RequestSlot(Completion):
    def __init__(self, correlation_id: str):
        super().__init__()
        self.correlation_id = correlation_id


class ClientSession:
    def __init__(
        self,
        client_id: str,
        transport: Transport,
        schemas: Optional[SchemaSet] = None,
        ack_mode: AckMode = AckMode.AUTO,
        strict: bool = True,
        relay: bool = False,
        request_timeout_ms: int = DEFAULT_REQUEST_TIMEOUT_MS,
        on_error: Optional[ErrorHandler] = None,
    ):
        self.client_id = client_id
        self.transport = transport
        self.schemas = BUILTIN_SCHEMAS.merge(schemas) if schemas is not None else None
        self.ack_mode = ack_mode
        self.strict = strict
        self.relay = relay
        self.request_timeout_ms = request_timeout_ms
        self.on_error = on_error or self._log_error
        self.state = SessionState.NEW
        self.broker_id: Optional[str] = None
        self.reply_topic: Optional[str] = None
        self._message_seq = itertools.count(1)
        self._publish_lock = threading.Lock()
        self._sub_seq = itertools.count(1)
        self._receipts = itertools.count(1)
        self._handlers: Dict[str, MessageHandler] = {}
        self._waiting: Dict[str, Completion] = {}
        self._requests: Dict[str, Completion] = {}
        self._connected = Completion()
        self._reply_sub: Optional[str] = None

    def __repr__(self) -> str:
        return f"ClientSession({self.client_id!r}, {self.state.value})"

    def _log_error(self, err: AcwpError) -> None:
        logger.warning("%s: broker refused (%s) %s", self.client_id, err.code, err.message)

    # --- connection -------------------------------------------------------------------

    def connect(self, timeout_ms: Optional[int] = None) -> "ClientSession":
        """Open the transport and send CONNECT; raises ConnectionRefused / DuplicateClientId."""
        if self.state is not SessionState.NEW:
            raise AcwpError(f"session {self.client_id} already {self.state.value}")
        self.transport.open(self._on_frame, self._on_transport_closed)
        self.state = SessionState.CONNECTING
        headers = {"client-id": self.client_id}
        if self.relay:
            headers["relay"] = "true"
        self.transport.send(Frame.build(Command.CONNECT, headers))
        if self.transport.can_block():
            self._await(self._connected, self._timeout(timeout_ms), "connect")
        return self

    @property
    def connected(self) -> bool:
        return self.state is SessionState.CONNECTED

    def when_connected(self, callback: Callable[[], None]) -> None:
        """Run ``callback`` once CONNECTED arrives (immediately if it already has)."""
        self._connected.add_done_callback(lambda slot: callback() if slot.error is None else None)

    def _send(self, frame: Frame) -> None:
        if self.state not in (SessionState.CONNECTING, SessionState.CONNECTED):
            raise NotConnected(f"session {self.client_id} is {self.state.value}")
        self.transport.send(frame)

    def _timeout(self, timeout_ms: Optional[int]) -> int:
        return self.request_timeout_ms if timeout_ms is None else timeout_ms

    def _await(self, slot: Completion, timeout_ms: int, what: str):
        if not self.transport.wait(slot, timeout_ms):
            raise RequestTimeout(f"{what}: no answer within {timeout_ms} ms")
        return slot.result()

    def _barrier(self, key: str, frame: Optional[Frame] = None) -> Completion:
        """Send ``frame`` then a PING with a receipt.

        The slot resolves on PONG or on an ERROR referencing ``key``; it is
        registered before anything goes out.
        """
        slot = Completion()
        receipt = f"r{next(self._receipts)}"
        self._waiting[key] = slot
        self._waiting[receipt] = slot
        slot.add_done_callback(lambda _: (self._waiting.pop(key, None), self._waiting.pop(receipt, None)))
        if frame is not None:
            self._send(frame)
        self._send(Frame.build(Command.PING, {"receipt": receipt}))
        return slot

    def sync(self, timeout_ms: Optional[int] = None) -> None:
        """Wait until the broker has processed everything sent so far."""
        slot = self._barrier(f"sync-{next(self._receipts)}")
        if self.transport.can_block():
            self._await(slot, self._timeout(timeout_ms), "sync")

    def disconnect(self) -> None:
        """Idempotent. The broker dead-letters whatever this session left unacked."""
        if self.state in (SessionState.CLOSED, SessionState.NEW):
            self.state = SessionState.CLOSED
            return
        try:
            self.transport.send(Frame.build(Command.DISCONNECT))
        except NotConnected:
            pass
        self.state = SessionState.CLOSED
        self.transport.close()
        for slot in list(self._requests.values()) + list(self._waiting.values()):
            slot.set_error(NotConnected(f"session {self.client_id} closed"))

    def _on_transport_closed(self) -> None:
        if self.state is not SessionState.CLOSED:
            logger.warning("%s: connection to broker lost", self.client_id)
            self.state = SessionState.CLOSED
            self._connected.set_error(NotConnected("connection closed"))

    # --- publishing -----------------------------------------------------------------------

    def _next_message_id(self) -> str:
        return make_message_id(self.client_id, next(self._message_seq))

    def check_payload(self, message_type: str, payload: Document) -> None:
        """Output-channel validation; raises before anything is sent."""
        if self.schemas is None:
            return
        violations = validate(payload, message_type, self.schemas, strict=self.strict)
        if any(v.kind is ViolationKind.UNKNOWN_TYPE for v in violations):
            raise UnknownMessageType(f"unknown message type '{message_type}'")
        if violations:
            raise SchemaViolation(violations)

    def _envelope(self, topic: str, message_type: str, payload: Document,
                  correlation_id: Optional[str] = None, reply_to: Optional[str] = None) -> Envelope:
        if self.state not in (SessionState.CONNECTING, SessionState.CONNECTED):
            raise NotConnected(f"session {self.client_id} is {self.state.value}")
        return Envelope(
            topic=topic,
            message_id=self._next_message_id(),
            sender_id=self.client_id,
            message_type=message_type,
            timestamp=self.transport.now_ms(),
            correlation_id=correlation_id,
            reply_to=reply_to,
            payload=payload,
        )

    def publish(self, topic: str, message_type: str, payload: Document,
                correlation_id: Optional[str] = None, reply_to: Optional[str] = None) -> str:
        self.check_payload(message_type, payload)
        # Ids leave in the order they are allocated.
        with self._publish_lock:
            env = self._envelope(topic, message_type, payload, correlation_id, reply_to)
            self._send(envelope_to_frame(env))
        return env.message_id

    def contribute(self, domain: str, message_type: str, payload: Document) -> str:
        return self.publish(f"{domain}.{TopicKind.CONTRIBUTION.value}", message_type, payload)

    def forward(self, env: Envelope) -> None:
        """Relay sessions only: publish a pre-built envelope unchanged."""
        if not self.relay:
            raise AcwpError("forward() needs a relay session")
        self._send(envelope_to_frame(env))

    # --- subscriptions ---------------------------------------------------------------------

    def subscribe(self, topic: str, handler: MessageHandler, subscription_id: Optional[str] = None) -> str:
        sub_id = subscription_id or f"{self.client_id}-{next(self._sub_seq)}"
        self._handlers[sub_id] = handler
        slot = self._barrier(sub_id, Frame.build(Command.SUBSCRIBE, {"topic": topic, "subscription-id": sub_id}))
        slot.add_done_callback(lambda s: self._handlers.pop(sub_id, None) if s.error else None)
        if self.transport.can_block():
            self._await(slot, self.request_timeout_ms, f"subscribe {topic}")
        return sub_id

    def unsubscribe(self, subscription_id: str) -> None:
        self._send(Frame.build(Command.UNSUBSCRIBE, {"subscription-id": subscription_id}))
        self._handlers.pop(subscription_id, None)

    def own_domain(self, domain: str, handler: ContributionHandler) -> str:
        """Become the owner of ``domain``; ``handler`` outputs are published with the contribution's id as correlation."""
        sub_id = owner_subscription_id(domain)

        def on_contribution(contribution: Envelope) -> None:
            for output in handler(contribution):
                if output.kind not in (TopicKind.PUBLICATION, TopicKind.REJECTION):
                    raise AcwpError(f"owner output must target publication or rejection, not {output.kind.value}")
                self.publish(f"{domain}.{output.kind.value}", output.message_type, output.payload,
                             correlation_id=contribution.message_id)

        self._handlers[sub_id] = on_contribution
        slot = self._barrier(domain, Frame.build(Command.OWN, {"domain": domain}))
        slot.add_done_callback(lambda s: self._handlers.pop(sub_id, None) if s.error else None)
        if self.transport.can_block():
            self._await(slot, self.request_timeout_ms, f"own {domain}")
        return sub_id

    def ack(self, subscription_id: str, message_id: str) -> None:
        self._send(Frame.build(Command.ACK, {"subscription-id": subscription_id, "message-id": message_id}))

    # --- request / reply ---------------------------------------------------------------------

    def _ensure_reply_subscription(self) -> str:
        if self.reply_topic is None:
            raise NotConnected(f"session {self.client_id} has no reply topic yet")
        if self._reply_sub is None:
            sub_id = f"{self.client_id}-{REPLY_SUBSCRIPTION}"
            self._reply_sub = sub_id
            self._handlers[sub_id] = self._on_reply
            self._send(Frame.build(Command.SUBSCRIBE, {"topic": self.reply_topic, "subscription-id": sub_id}))
        return self.reply_topic

    def _on_reply(self, env: Envelope) -> None:
        slot = self._requests.get(env.correlation_id or "")
        if slot is None:
            logger.debug("%s: reply with unknown correlation %s ignored", self.client_id, env.correlation_id)
            return
        slot.set_result(env)

    def request_async(self, topic: str, message_type: str, payload: Document,
                      on_reply: Callable[[Envelope], None],
                      on_timeout: Optional[Callable[[str], None]] = None,
                      timeout_ms: Optional[int] = None) -> str:
        """Publish a request; ``on_reply`` gets the first envelope carrying its correlation id."""
        slot = self._start_request(topic, message_type, payload, timeout_ms)

        def done(s: Completion) -> None:
            if s.error is None:
                on_reply(s.value)
            elif on_timeout is not None and isinstance(s.error, RequestTimeout):
                on_timeout(s.error.ref)

        slot.add_done_callback(done)
        return slot.correlation_id

    def request(self, topic: str, message_type: str, payload: Document,
                timeout_ms: Optional[int] = None) -> Envelope:
        if not self.transport.can_block():
            raise AcwpError("request() cannot block on this transport; use request_async()")
        timeout_ms = self._timeout(timeout_ms)
        slot = self._start_request(topic, message_type, payload, timeout_ms)
        # The slot's own timer raises RequestTimeout; the extra margin covers dispatch latency.
        self.transport.wait(slot, timeout_ms + 1000)
        if not slot.done:
            slot.set_error(RequestTimeout(f"no reply within {timeout_ms} ms", ref=slot.correlation_id))
        return slot.result()

    def _start_request(self, topic: str, message_type: str, payload: Document,
                       timeout_ms: Optional[int]) -> "_RequestSlot":
        reply_to = self._ensure_reply_subscription()
        timeout_ms = self._timeout(timeout_ms)
        self.check_payload(message_type, payload)
        with self._publish_lock:
            env = self._envelope(topic, message_type, payload, reply_to=reply_to)
            message_id = env.message_id
            slot = _RequestSlot(message_id)
            self._requests[message_id] = slot
            timer = self.transport.call_later(
                timeout_ms,
                lambda: slot.set_error(RequestTimeout(f"no reply within {timeout_ms} ms", ref=message_id)),
            )
            slot.add_done_callback(lambda _: (timer.cancel(), self._requests.pop(message_id, None)))
            try:
                self._send(envelope_to_frame(env))
            except AcwpError as e:
                slot.set_error(e)
                raise
        return slot

    # --- inbound ---------------------------------------------------------------------------

    def _on_frame(self, frame: Frame) -> None:
        command = frame.command
        if command is Command.MESSAGE:
            self._on_message(frame)
        elif command is Command.CONNECTED:
            self.state = SessionState.CONNECTED
            self.broker_id = frame.header("broker-id")
            self.reply_topic = frame.header("reply-topic")
            self._connected.set_result(self.broker_id)
        elif command is Command.PONG:
            slot = self._waiting.get(frame.header("receipt", ""))
            if slot is not None:
                slot.set_result(None)
        elif command is Command.ERROR:
            self._on_error_frame(frame)
        else:
            logger.warning("%s: unexpected %s frame", self.client_id, command.value)

    def _on_message(self, frame: Frame) -> None:
        sub_id = frame.headers["subscription-id"]
        env = frame_to_envelope(frame)
        handler = self._handlers.get(sub_id)
        if handler is None:
            logger.info("%s: message %s for unknown subscription %s", self.client_id, env.message_id, sub_id)
            return
        try:
            handler(env)
        except Exception:
            logger.exception("%s: handler for %s failed on %s; not acked", self.client_id, sub_id, env.message_id)
            return
        if self.ack_mode is AckMode.AUTO or sub_id == self._reply_sub:
            if self.state is SessionState.CONNECTED:
                self.ack(sub_id, env.message_id)

    def _on_error_frame(self, frame: Frame) -> None:
        code = frame.headers["error-code"]
        ref = frame.header("ref-message-id")
        if code == "schema-violation":
            detail = "; ".join(line for line in frame.body.decode("utf-8").splitlines() if line.strip())
        else:
            detail = frame.header("detail") or frame.body.decode("utf-8").strip()
        err = from_code(code, detail, ref)
        if self.state is SessionState.CONNECTING:
            self.state = SessionState.CLOSED
            self._connected.set_error(err)
            self.on_error(err)
            return
        slot = self._waiting.get(ref or "")
        if slot is not None:
            slot.set_error(err)
        self.on_error(err)


def topics_from_reply(reply: Envelope) -> List[Dict[str, object]]:
    """Rows of a ``sys.topics.reply`` document, one per topic."""
    nested = nest_document(reply.payload)
    return list(nested.get("topics", []))


def fetch_topics(session: ClientSession, timeout_ms: Optional[int] = None) -> List[Dict[str, object]]:
    """Ask the session's broker for its topics and counters."""
    reply = session.request(INTROSPECTION_TOPIC, "sys.topics.request", Document(), timeout_ms)
    return topics_from_reply(reply)


def connect(endpoint: str, client_id: str, schemas: Optional[SchemaSet] = None, **kwargs) -> ClientSession:
    """Open a session to a live broker at ``host:port``."""
    max_frame_bytes = kwargs.pop("max_frame_bytes", None)
    transport = TcpTransport(endpoint, max_frame_bytes) if max_frame_bytes else TcpTransport(endpoint)
    return ClientSession(client_id, transport, schemas=schemas, **kwargs).connect()
