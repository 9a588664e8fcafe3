"""Transports carry frames between a ClientSession and one broker.

* ``TcpTransport`` talks to a live broker. A reader thread decodes frames and a
  single dispatch thread hands them (and timer callbacks) to the session, so
  handlers of one session never run concurrently.
* ``LoopbackTransport`` connects to an in-process ``BrokerService`` through a
  ``LoopbackHub``, a zero-latency event loop with a virtual clock.

The simulation brings its own transport (``ats_sim.network``).
"""

import heapq
import itertools
import logging
import queue
import socket
import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from typing import Any, Callable, Deque, List, Optional, Tuple

from protocol import Frame, decode_frame, encode_frame
from protocol.errors import AcwpError, ConnectionRefused, NotConnected
from protocol.frames import DEFAULT_MAX_FRAME_BYTES
from shared_utils.settings import parse_endpoint

logger = logging.getLogger(__name__)

FrameHandler = Callable[[Frame], None]


class Completion:
    """Single-assignment result slot shared by the session and its waiter."""

    def __init__(self):
        self._event = threading.Event()
        self.value: Any = None
        self.error: Optional[BaseException] = None
        self._callbacks: List[Callable[["Completion"], None]] = []

    @property
    def done(self) -> bool:
        return self._event.is_set()

    def set_result(self, value: Any) -> None:
        if not self.done:
            self.value = value
            self._finish()

    def set_error(self, error: BaseException) -> None:
        if not self.done:
            self.error = error
            self._finish()

    def _finish(self) -> None:
        self._event.set()
        for callback in self._callbacks:
            callback(self)

    def add_done_callback(self, callback: Callable[["Completion"], None]) -> None:
        if self.done:
            callback(self)
        else:
            self._callbacks.append(callback)

    def result(self) -> Any:
        if self.error is not None:
            raise self.error
        return self.value


class Transport(ABC):
    """What a ClientSession needs from the wire."""

    @abstractmethod
    def open(self, on_frame: FrameHandler, on_close: Callable[[], None]) -> None:
        """Connect; raises ConnectionRefused."""

    @abstractmethod
    def send(self, frame: Frame) -> None:
        """Queue one frame for the broker; raises NotConnected."""

    @abstractmethod
    def close(self) -> None: ...

    @abstractmethod
    def now_ms(self) -> int: ...

    @abstractmethod
    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> Any:
        """Run ``fn`` on the dispatch context later; returns a handle with ``cancel()``."""

    def can_block(self) -> bool:
        return False

    def wait(self, completion: Completion, timeout_ms: int) -> bool:
        return completion.done

    @property
    def available(self) -> bool:
        return True


# --- TCP ---------------------------------------------------------------------------

_CLOSED = object()


class TcpTransport(Transport):
    def __init__(self, endpoint: str, max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES,
                 connect_timeout_s: float = 5.0):
        self.endpoint = endpoint
        self.max_frame_bytes = max_frame_bytes
        self.connect_timeout_s = connect_timeout_s
        self._sock: Optional[socket.socket] = None
        self._write_lock = threading.Lock()
        self._inbox: "queue.Queue[Any]" = queue.Queue()
        self._dispatcher: Optional[threading.Thread] = None
        self._closed = False

    def open(self, on_frame: FrameHandler, on_close: Callable[[], None]) -> None:
        try:
            host, port = parse_endpoint(self.endpoint)
        except ValueError as e:
            raise ConnectionRefused(str(e), ref=self.endpoint) from e
        try:
            self._sock = socket.create_connection((host, port), timeout=self.connect_timeout_s)
        except OSError as e:
            raise ConnectionRefused(f"cannot connect to {self.endpoint}: {e}", ref=self.endpoint) from e
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        rfile = self._sock.makefile("rb")

        def read_loop() -> None:
            try:
                while True:
                    frame = decode_frame(rfile, self.max_frame_bytes)
                    if frame is None:
                        break
                    self._inbox.put(frame)
            except (AcwpError, OSError, ValueError) as e:
                if not self._closed:
                    logger.warning("connection to %s failed: %s", self.endpoint, e)
            finally:
                self._inbox.put(_CLOSED)

        def dispatch_loop() -> None:
            while True:
                item = self._inbox.get()
                if item is _CLOSED:
                    self._closed = True
                    on_close()
                    return
                try:
                    item() if callable(item) else on_frame(item)
                except Exception:
                    logger.exception("dispatch failed")

        threading.Thread(target=read_loop, name=f"acwp-read-{self.endpoint}", daemon=True).start()
        self._dispatcher = threading.Thread(target=dispatch_loop, name=f"acwp-dispatch-{self.endpoint}",
                                            daemon=True)
        self._dispatcher.start()

    def send(self, frame: Frame) -> None:
        if self._sock is None or self._closed:
            raise NotConnected(f"not connected to {self.endpoint}")
        data = encode_frame(frame)
        with self._write_lock:
            try:
                self._sock.sendall(data)
            except OSError as e:
                raise NotConnected(f"write to {self.endpoint} failed: {e}") from e

    def close(self) -> None:
        if self._sock is None:
            return
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> threading.Timer:
        timer = threading.Timer(delay_ms / 1000, lambda: self._inbox.put(fn))
        timer.daemon = True
        timer.start()
        return timer

    def can_block(self) -> bool:
        return threading.current_thread() is not self._dispatcher

    def wait(self, completion: Completion, timeout_ms: int) -> bool:
        return completion._event.wait(timeout_ms / 1000)

    @property
    def available(self) -> bool:
        return self._sock is not None and not self._closed


# --- in-process ------------------------------------------------------------------------

class _HubTimer:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class LoopbackHub:
    """Zero-latency event loop with a virtual clock.

    Work posted while the loop drains runs after the current item, in order.
    ``advance`` moves the clock and fires due timers.
    """

    def __init__(self, start_ms: int = 0):
        self.now = start_ms
        self._queue: Deque[Callable[[], None]] = deque()
        self._timers: List[Tuple[int, int, _HubTimer, Callable[[], None]]] = []
        self._seq = itertools.count()
        self.draining = False

    def clock(self) -> int:
        return self.now

    def post(self, fn: Callable[[], None]) -> None:
        self._queue.append(fn)

    def run(self) -> None:
        if self.draining:
            return
        self.draining = True
        try:
            while self._queue:
                self._queue.popleft()()
        finally:
            self.draining = False

    def schedule(self, delay_ms: int, fn: Callable[[], None]) -> _HubTimer:
        handle = _HubTimer()
        heapq.heappush(self._timers, (self.now + delay_ms, next(self._seq), handle, fn))
        return handle

    def advance(self, ms: int) -> None:
        target = self.now + ms
        while self._timers and self._timers[0][0] <= target:
            at, _, handle, fn = heapq.heappop(self._timers)
            self.now = max(self.now, at)
            if not handle.cancelled:
                self.post(fn)
                self.run()
        self.now = target
        self.run()


class LoopbackTransport(Transport):
    def __init__(self, hub: LoopbackHub, service):
        self.hub = hub
        self.service = service
        self._session = None
        self._on_frame: Optional[FrameHandler] = None
        self._closed = False

    def open(self, on_frame: FrameHandler, on_close: Callable[[], None]) -> None:
        self._on_frame = on_frame
        self._session = self.service.open_session(lambda f: self.hub.post(lambda: self._deliver(f)))

    def _deliver(self, frame: Frame) -> None:
        if not self._closed:
            self._on_frame(frame)

    def send(self, frame: Frame) -> None:
        if self._session is None or self._closed:
            raise NotConnected("loopback transport is closed")
        session = self._session
        self.hub.post(lambda: session.handle(frame))
        self.hub.run()

    def close(self) -> None:
        if self._session is None or self._closed:
            return
        self._closed = True
        self.hub.post(self._session.close)
        self.hub.run()

    def now_ms(self) -> int:
        return self.hub.now

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> _HubTimer:
        return self.hub.schedule(delay_ms, fn)

    def can_block(self) -> bool:
        return not self.hub.draining

    def wait(self, completion: Completion, timeout_ms: int) -> bool:
        self.hub.run()
        if not completion.done:
            self.hub.advance(timeout_ms)
        return completion.done

    @property
    def available(self) -> bool:
        return self._session is not None and not self._closed
