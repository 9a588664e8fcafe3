"""Broker configuration files (Document grammar) and broker construction."""

import logging
from enum import Enum
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator

from protocol import SchemaSet, load_schema_files
from protocol.envelope import CLIENT_ID_RE
from shared_utils.settings import load_config_document, resolve_relative

from .engine import Broker
from .models import DEFAULT_ACK_DEADLINE_MS, TopicDescriptor, TopicScope

logger = logging.getLogger(__name__)


class BrokerRole(str, Enum):
    CENTRAL = "central"
    LOCAL = "local"


class DomainConfig(BaseModel):
    name: str
    ack_deadline_ms: Optional[int] = Field(default=None, gt=0)


class TopicConfig(BaseModel):
    name: str
    scope: TopicScope = TopicScope.GLOBAL
    ack_deadline_ms: Optional[int] = Field(default=None, gt=0)


class BrokerConfig(BaseModel):
    """Contents of a broker config file.

    Example::

        broker_id = "central"
        listen = "127.0.0.1:7600"
        schemas.0 = "../ats_sim/data"
        domains.0.name = "fpl"
        topics.0.name = "selection"
        topics.0.scope = "local"
    """

    broker_id: str
    role: BrokerRole = BrokerRole.CENTRAL
    listen: str = "127.0.0.1:7600"
    schemas: List[Path] = Field(default_factory=list)
    strict: bool = True
    ack_deadline_ms: int = Field(default=DEFAULT_ACK_DEADLINE_MS, gt=0)
    domains: List[DomainConfig] = Field(default_factory=list)
    topics: List[TopicConfig] = Field(default_factory=list)

    @field_validator("broker_id")
    @classmethod
    def _broker_id(cls, v: str) -> str:
        if not CLIENT_ID_RE.match(v):
            raise ValueError(f"bad broker id {v!r}")
        return v


def load_broker_config(path: Path) -> BrokerConfig:
    config = load_config_document(path, BrokerConfig)
    return config.model_copy(update={"schemas": resolve_relative(Path(path), config.schemas)})


def build_broker(config: BrokerConfig, schemas: Optional[SchemaSet] = None, clock=None, observer=None) -> Broker:
    """Instantiate a broker and declare its configured domains and topics."""
    if schemas is None and config.schemas:
        schemas = load_schema_files(config.schemas)
    kwargs = {"clock": clock} if clock is not None else {}
    broker = Broker(
        config.broker_id,
        schemas=schemas,
        strict=config.strict,
        default_ack_deadline_ms=config.ack_deadline_ms,
        owners_allowed=config.role is BrokerRole.CENTRAL,
        observer=observer,
        **kwargs,
    )
    for domain in config.domains:
        broker.declare_domain(domain.name, domain.ack_deadline_ms)
    for topic in config.topics:
        broker.declare_topic(TopicDescriptor(
            name=topic.name,
            scope=topic.scope,
            ack_deadline_ms=topic.ack_deadline_ms or config.ack_deadline_ms,
        ))
    logger.info("broker %s (%s): %d topics", config.broker_id, config.role.value, len(broker.list_topics()))
    return broker
