"""Two-level broker hierarchy: one central broker, any number of local brokers."""

import logging
from typing import Dict, List, Optional

from protocol.errors import DuplicateBrokerId

from .bridge import Bridge

logger = logging.getLogger(__name__)


class Hierarchy:
    """Bookkeeping of which local brokers are attached to the central broker.

    Attaching only starts the new bridge; the central broker and the server
    components connected to it are not touched. Down-forwarded topics reach the
    new broker as soon as its bridge has subscribed.
    """

    def __init__(self, central_broker_id: str):
        self.central_broker_id = central_broker_id
        self._bridges: Dict[str, Bridge] = {}

    def attach_local_broker(self, bridge: Bridge, start: bool = True) -> None:
        broker_id = bridge.local_broker_id
        if broker_id == self.central_broker_id or broker_id in self._bridges:
            raise DuplicateBrokerId(f"broker id '{broker_id}' is already part of the hierarchy", ref=broker_id)
        if bridge.central_broker_id != self.central_broker_id:
            raise ValueError(f"bridge points at '{bridge.central_broker_id}', not '{self.central_broker_id}'")
        self._bridges[broker_id] = bridge
        if start:
            bridge.start()
        logger.info("attached local broker %s", broker_id)

    def detach_local_broker(self, broker_id: str) -> Optional[Bridge]:
        bridge = self._bridges.pop(broker_id, None)
        if bridge is not None:
            bridge.stop()
            logger.info("detached local broker %s", broker_id)
        return bridge

    def bridge(self, broker_id: str) -> Optional[Bridge]:
        return self._bridges.get(broker_id)

    @property
    def local_broker_ids(self) -> List[str]:
        return sorted(self._bridges)

    @property
    def broker_ids(self) -> List[str]:
        return [self.central_broker_id, *self.local_broker_ids]

    def __len__(self) -> int:
        return len(self._bridges)
