"""Running a bridge between two live brokers."""

import logging
import threading
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field

from client_sdk.session import AckMode, ClientSession
from client_sdk.transport import TcpTransport
from protocol.errors import ConfigError, ProtocolSyntaxError
from shared_utils.settings import Settings, load_config_document, resolve_relative

from .bridge import DEFAULT_BRIDGE_BUFFER, Bridge
from .rules import RuleSet, load_routing_rules

logger = logging.getLogger(__name__)


class BridgeConfig(BaseModel):
    """Contents of a bridge config file.

    Example::

        local_broker_id = "cwp1"
        local_endpoint = "127.0.0.1:7601"
        central_endpoint = "127.0.0.1:7600"
        rules = "routes.rules"
    """

    local_broker_id: str
    local_endpoint: str
    central_broker_id: str = "central"
    central_endpoint: str
    rules: Path
    buffer: int = Field(default=DEFAULT_BRIDGE_BUFFER, gt=0)
    client_id: Optional[str] = None

    @property
    def relay_client_id(self) -> str:
        return self.client_id or f"bridge-{self.local_broker_id}"


def load_bridge_config(path: Path) -> BridgeConfig:
    config = load_config_document(path, BridgeConfig)
    return config.model_copy(update={"rules": resolve_relative(Path(path), [config.rules])[0]})


def load_rules_file(path: Path) -> RuleSet:
    try:
        return load_routing_rules(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read rules: {e.strerror}", location=str(path)) from e
    except ProtocolSyntaxError as e:
        raise ConfigError(e.message, location=str(path)) from e


def start_live_bridge(config: BridgeConfig, settings: Settings) -> Bridge:
    """Connect relay sessions to both brokers and start forwarding."""
    rules = load_rules_file(config.rules)
    sessions = []
    for endpoint in (config.local_endpoint, config.central_endpoint):
        transport = TcpTransport(endpoint, settings.max_frame_bytes)
        session = ClientSession(config.relay_client_id, transport, relay=True, ack_mode=AckMode.MANUAL,
                                request_timeout_ms=settings.request_timeout_ms)
        sessions.append(session.connect())
    local, central = sessions
    if central.broker_id != config.central_broker_id:
        logger.warning("central endpoint reports broker id %s, expected %s",
                       central.broker_id, config.central_broker_id)
    bridge = Bridge(config.local_broker_id, config.central_broker_id, rules, local, central,
                    buffer_limit=min(config.buffer, settings.bridge_buffer))
    bridge.start()
    return bridge


def run_bridge(config: BridgeConfig, settings: Settings, stop: Optional[threading.Event] = None) -> int:
    """Forward until ``stop`` is set or a broker connection drops; returns an exit code."""
    stop = stop or threading.Event()
    bridge = start_live_bridge(config, settings)
    logger.info("bridge %s <-> %s running", config.local_broker_id, config.central_broker_id)
    try:
        while not stop.wait(0.2):
            if not (bridge.local.connected and bridge.central.connected):
                logger.error("bridge %s lost a broker connection", config.local_broker_id)
                return 1
    except KeyboardInterrupt:
        pass
    finally:
        bridge.stop()
    return 0
