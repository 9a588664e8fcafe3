"""Frame-level session handling on top of the broker engine.

``BrokerService`` is transport-agnostic: the TCP server and the simulation both
open one ``BrokerSession`` per connection, feed it decoded frames and give it a
``send`` callable for frames going back out. ``send`` is called with the
service lock held and must not block.
"""

import logging
import threading
from typing import Callable, Dict, List, Optional

from protocol import Command, Frame, envelope_to_frame, frame_to_envelope
from protocol.errors import AcwpError, SchemaViolation, UnknownPending
from protocol.frames import check_required

from .engine import Broker
from .models import DlqRecord

logger = logging.getLogger(__name__)

SendFn = Callable[[Frame], None]


def error_frame(err: AcwpError) -> Frame:
    headers = {"error-code": err.code}
    if err.ref is not None:
        headers["ref-message-id"] = err.ref
    headers["detail"] = " ".join(err.message.split())
    if isinstance(err, SchemaViolation):
        body = "".join(f"{v}\n" for v in err.violations)
    else:
        body = err.message + "\n"
    return Frame.build(Command.ERROR, headers, body.encode("utf-8"))


class BrokerService:
    """Serializes every session's commands into one broker engine."""

    def __init__(self, broker: Broker):
        self.broker = broker
        self._lock = threading.RLock()
        self._senders: Dict[str, SendFn] = {}

    @property
    def broker_id(self) -> str:
        return self.broker.broker_id

    def open_session(self, send: SendFn) -> "BrokerSession":
        return BrokerSession(self, send)

    def sweep(self, now: Optional[int] = None) -> List[DlqRecord]:
        """Run the deadline sweep and ship resulting dead-letter deliveries."""
        with self._lock:
            records = self.broker.sweep_deadlines(now)
            self._flush()
            return records

    def _flush(self) -> None:
        for delivery in self.broker.dispatch():
            send = self._senders.get(delivery.client)
            if send is None:
                logger.warning("[%s] no session for %s; delivery of %s stays pending",
                               self.broker_id, delivery.client, delivery.envelope.message_id)
                continue
            send(envelope_to_frame(delivery.envelope, Command.MESSAGE, delivery.subscription_id))


class BrokerSession:
    """One client connection."""

    def __init__(self, service: BrokerService, send: SendFn):
        self.service = service
        self.send = send
        self.client_id: Optional[str] = None
        self.closed = False

    @property
    def broker(self) -> Broker:
        return self.service.broker

    def handle(self, frame: Frame) -> None:
        if self.closed:
            logger.debug("frame %s on closed session %s ignored", frame.command.value, self.client_id)
            return
        with self.service._lock:
            try:
                self._handle(frame)
            except AcwpError as e:
                logger.info("[%s] %s from %s refused: %s %s", self.service.broker_id, frame.command.value,
                            self.client_id, e.code, e.message)
                self.send(error_frame(e))
            self.service._flush()

    def _handle(self, frame: Frame) -> None:
        check_required(frame.command, frame.headers)
        command = frame.command
        if command is Command.CONNECT:
            self._connect(frame)
            return
        if command is Command.PING:
            receipt = frame.header("receipt")
            self.send(Frame.build(Command.PONG, {"receipt": receipt} if receipt else {}))
            return
        if self.client_id is None:
            raise AcwpError(f"{command.value} before CONNECT")

        client = self.client_id
        if command is Command.PUBLISH:
            try:
                self.broker.publish(client, frame_to_envelope(frame))
            except AcwpError as e:
                e.ref = frame.headers["message-id"]
                raise
        elif command is Command.SUBSCRIBE:
            sub_id = frame.headers["subscription-id"]
            try:
                self.broker.subscribe(client, frame.headers["topic"], sub_id)
            except AcwpError as e:
                e.ref = sub_id
                raise
        elif command is Command.UNSUBSCRIBE:
            self.broker.unsubscribe(client, frame.headers["subscription-id"])
        elif command is Command.ACK:
            try:
                self.broker.ack(client, frame.headers["subscription-id"], frame.headers["message-id"])
            except UnknownPending:
                pass
        elif command is Command.OWN:
            self.broker.register_owner(client, frame.headers["domain"])
        elif command is Command.DISCONNECT:
            self.close()
        else:
            raise AcwpError(f"{command.value} is not a client command")

    def _connect(self, frame: Frame) -> None:
        if self.client_id is not None:
            raise AcwpError(f"session already connected as '{self.client_id}'")
        client_id = frame.headers["client-id"]
        relay = frame.header("relay", "false") == "true"
        reply_topic = self.broker.connect(client_id, relay=relay)
        self.client_id = client_id
        self.service._senders[client_id] = self.send
        self.send(Frame.build(Command.CONNECTED, {
            "client-id": client_id,
            "broker-id": self.service.broker_id,
            "reply-topic": reply_topic,
        }))

    def close(self) -> List[DlqRecord]:
        """Tear the session down (DISCONNECT or lost connection). Idempotent."""
        if self.closed:
            return []
        self.closed = True
        if self.client_id is None:
            return []
        with self.service._lock:
            if self.service._senders.get(self.client_id) is self.send:
                del self.service._senders[self.client_id]
            records = self.broker.disconnect(self.client_id)
            self.service._flush()
        return records
