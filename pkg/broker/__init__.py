"""A single broker instance: topics, ownership ACL, acknowledged delivery, dead letters."""

from .config import BrokerConfig, BrokerRole, build_broker, load_broker_config
from .engine import INTROSPECTION_TOPIC, Broker, broker_sender_id, owner_subscription_id, reply_topic_for
from .models import (
    BrokerEvent,
    BrokerStats,
    Delivery,
    DlqReason,
    DlqRecord,
    Subscription,
    TopicDescriptor,
    TopicKind,
    TopicScope,
    TopicStats,
    topic_table,
)
from .service import BrokerService, BrokerSession
from .topic_registry import TopicRegistry

__all__ = [
    "BrokerConfig",
    "BrokerRole",
    "build_broker",
    "load_broker_config",
    "INTROSPECTION_TOPIC",
    "Broker",
    "broker_sender_id",
    "owner_subscription_id",
    "reply_topic_for",
    "BrokerEvent",
    "BrokerStats",
    "Delivery",
    "DlqReason",
    "DlqRecord",
    "Subscription",
    "TopicDescriptor",
    "TopicKind",
    "TopicScope",
    "TopicStats",
    "topic_table",
    "BrokerService",
    "BrokerSession",
    "TopicRegistry",
]
