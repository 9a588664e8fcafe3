"""Live TCP front end: a reader and a writer thread per connection, a deadline sweeper thread."""

import logging
import queue
import socketserver
import threading
from typing import Optional, Tuple

from protocol import decode_frame, encode_frame
from protocol.errors import AcwpError
from protocol.frames import DEFAULT_MAX_FRAME_BYTES

from .service import BrokerService, error_frame

logger = logging.getLogger(__name__)


class _ConnectionHandler(socketserver.StreamRequestHandler):
    """Reads frames on the handler thread; a writer thread drains the outbound queue.

    ``send`` only enqueues, so a peer that stops reading never blocks the
    service lock.
    """

    server: "BrokerServer"
    drain_timeout_s = 1.0

    def handle(self) -> None:
        peer = "%s:%s" % self.client_address[:2]
        outbound: "queue.Queue[Optional[bytes]]" = queue.Queue()

        def send(frame) -> None:
            outbound.put(encode_frame(frame))

        def write_loop() -> None:
            while True:
                data = outbound.get()
                if data is None:
                    return
                try:
                    self.wfile.write(data)
                    self.wfile.flush()
                except OSError as e:
                    logger.debug("write to %s failed: %s", peer, e)
                    return

        writer = threading.Thread(target=write_loop, name=f"acwp-write-{peer}", daemon=True)
        writer.start()
        session = self.server.service.open_session(send)
        logger.debug("connection from %s", peer)
        try:
            while not session.closed:
                try:
                    frame = decode_frame(self.rfile, self.server.max_frame_bytes)
                except AcwpError as e:
                    # The stream is out of sync after a framing error.
                    send(error_frame(e))
                    break
                if frame is None:
                    break
                session.handle(frame)
        except OSError as e:
            logger.debug("connection %s lost: %s", peer, e)
        finally:
            session.close()
            outbound.put(None)
            writer.join(self.drain_timeout_s)
            if writer.is_alive():
                logger.info("%s stopped reading; %d frames not written", peer, outbound.qsize())
            logger.debug("connection from %s closed (%s)", peer, session.client_id)


class BrokerServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, service: BrokerService, address: Tuple[str, int],
                 max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES, sweep_interval_ms: int = 100):
        super().__init__(address, _ConnectionHandler)
        self.service = service
        self.max_frame_bytes = max_frame_bytes
        self.sweep_interval_ms = sweep_interval_ms
        self._stop = threading.Event()
        self._sweeper = threading.Thread(target=self._sweep_loop, name="deadline-sweeper", daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def _sweep_loop(self) -> None:
        while not self._stop.wait(self.sweep_interval_ms / 1000):
            try:
                records = self.service.sweep()
            except Exception:
                logger.exception("deadline sweep failed")
                continue
            for record in records:
                logger.info("[%s] dead-lettered %s for %s (%s)", self.service.broker_id,
                            record.original_message_id, record.failed_client, record.reason.value)

    def serve(self) -> None:
        """Serve until :meth:`stop` (or KeyboardInterrupt)."""
        self._sweeper.start()
        logger.info("broker %s listening on %s", self.service.broker_id, self.endpoint)
        try:
            self.serve_forever(poll_interval=0.1)
        finally:
            self._stop.set()

    def stop(self) -> None:
        self._stop.set()
        self.shutdown()
        self.server_close()
