"""Virtual time, links and the simulation transport.

Everything in a simulation run happens on one ``Simulator``: a heap of
callbacks ordered by (virtual time, insertion sequence). Links add latency
(fixed plus seeded jitter), keep per-direction FIFO order, can drop with a
given probability and can be partitioned, which holds their traffic until
``heal``.
"""

import heapq
import itertools
import logging
import random
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from client_sdk.transport import FrameHandler, Transport
from protocol import Frame
from protocol.errors import NotConnected

logger = logging.getLogger(__name__)

UP = "up"
DOWN = "down"


class _Scheduled:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """Single-threaded discrete-event loop with a seeded random generator."""

    def __init__(self, seed: int = 0, start_ms: int = 0):
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = start_ms
        self._queue: List[Tuple[int, int, _Scheduled, Callable[[], None]]] = []
        self._seq = itertools.count()
        self.steps = 0

    def clock(self) -> int:
        return self.now

    def at(self, when: int, fn: Callable[[], None]) -> _Scheduled:
        handle = _Scheduled()
        heapq.heappush(self._queue, (max(when, self.now), next(self._seq), handle, fn))
        return handle

    def delay(self, delay_ms: int, fn: Callable[[], None]) -> _Scheduled:
        return self.at(self.now + delay_ms, fn)

    @property
    def idle(self) -> bool:
        return not any(not entry[2].cancelled for entry in self._queue)

    def next_time(self) -> Optional[int]:
        while self._queue and self._queue[0][2].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0][0] if self._queue else None

    def step(self) -> bool:
        while self._queue:
            when, _, handle, fn = heapq.heappop(self._queue)
            if handle.cancelled:
                continue
            self.now = when
            self.steps += 1
            fn()
            return True
        return False

    def run(self, max_time_ms: Optional[int] = None) -> int:
        """Process events until the queue is empty or the next one lies beyond ``max_time_ms``."""
        while True:
            upcoming = self.next_time()
            if upcoming is None:
                break
            if max_time_ms is not None and upcoming > max_time_ms:
                logger.warning("simulation stopped at max time %d with events pending", max_time_ms)
                self.now = max_time_ms
                break
            self.step()
        return self.now


class LinkModel(BaseModel):
    latency_ms: int = Field(default=5, ge=0)
    jitter_ms: int = Field(default=0, ge=0)
    drop_probability: float = Field(default=0.0, ge=0.0, le=1.0)


class Link:
    """A bidirectional connection between a client endpoint and a broker."""

    def __init__(self, sim: Simulator, name: str, model: LinkModel):
        self.sim = sim
        self.name = name
        self.model = model
        self.partitioned = False
        self._last: Dict[str, int] = {UP: 0, DOWN: 0}
        self._held: List[Tuple[str, Callable[[], None]]] = []
        self.dropped = 0

    def __repr__(self) -> str:
        return f"Link({self.name}{', partitioned' if self.partitioned else ''})"

    def transmit(self, direction: str, fn: Callable[[], None]) -> None:
        if self.partitioned:
            self._held.append((direction, fn))
            return
        if self.model.drop_probability and self.sim.rng.random() < self.model.drop_probability:
            self.dropped += 1
            logger.debug("link %s dropped a %s frame", self.name, direction)
            return
        latency = self.model.latency_ms
        if self.model.jitter_ms:
            latency += self.sim.rng.randint(0, self.model.jitter_ms)
        # Per-direction FIFO: never overtake the previous frame.
        when = max(self.sim.now + latency, self._last[direction])
        self._last[direction] = when
        self.sim.at(when, fn)

    def partition(self) -> None:
        self.partitioned = True

    def heal(self) -> None:
        self.partitioned = False
        held, self._held = self._held, []
        for direction, fn in held:
            self.transmit(direction, fn)


class SimTransport(Transport):
    """Client side of a simulated connection to a ``BrokerService``."""

    def __init__(self, sim: Simulator, link: Link, service):
        self.sim = sim
        self.link = link
        self.service = service
        self._session = None
        self._on_frame: Optional[FrameHandler] = None
        self._closed = False

    def open(self, on_frame: FrameHandler, on_close: Callable[[], None]) -> None:
        self._on_frame = on_frame
        self._session = self.service.open_session(
            lambda frame: self.link.transmit(DOWN, lambda: self._deliver(frame)))

    def _deliver(self, frame: Frame) -> None:
        if not self._closed:
            self._on_frame(frame)

    def send(self, frame: Frame) -> None:
        if self._session is None or self._closed:
            raise NotConnected(f"link {self.link.name} is closed")
        session = self._session
        self.link.transmit(UP, lambda: session.handle(frame))

    def close(self) -> None:
        if self._session is None or self._closed:
            return
        self._closed = True
        self.link.transmit(UP, self._session.close)

    def now_ms(self) -> int:
        return self.sim.now

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> _Scheduled:
        return self.sim.delay(delay_ms, fn)

    @property
    def available(self) -> bool:
        return self._session is not None and not self._closed and not self.link.partitioned
