"""Topic registry: declared topics, their dead-letter siblings and data domains."""

from typing import Dict, List, Optional

from protocol.envelope import is_topic_name
from protocol.errors import AlreadyDeclared, ReservedSuffix, UnknownTopic

from .models import DEFAULT_ACK_DEADLINE_MS, DLQ_SUFFIX, TopicDescriptor, TopicKind, TopicScope


class TopicRegistry:
    """Registry for topics declared on one broker."""

    def __init__(self):
        self._topics: Dict[str, TopicDescriptor] = {}

    def declare(self, desc: TopicDescriptor) -> bool:
        """Declare a topic and its ``.dlq`` sibling.

        Returns True if the topic is new, False for an identical re-declaration.
        """
        if desc.name.endswith(DLQ_SUFFIX):
            raise ReservedSuffix(f"'{desc.name}': the {DLQ_SUFFIX} suffix is reserved for dead-letter topics")
        existing = self._topics.get(desc.name)
        if existing is not None:
            if existing == desc:
                return False
            raise AlreadyDeclared(f"topic '{desc.name}' already declared with different attributes")
        self._topics[desc.name] = desc
        self._topics[desc.dlq_name] = desc.dead_letter_sibling()
        return True

    def declare_domain(self, domain: str, ack_deadline_ms: int = DEFAULT_ACK_DEADLINE_MS,
                       scope: TopicScope = TopicScope.GLOBAL) -> List[TopicDescriptor]:
        """Declare ``<domain>.contribution``, ``.publication`` and ``.rejection``."""
        if not is_topic_name(domain):
            raise ValueError(f"bad domain name {domain!r}")
        descriptors = [
            TopicDescriptor(name=f"{domain}.{kind.value}", kind=kind, scope=scope,
                            ack_deadline_ms=ack_deadline_ms, domain=domain)
            for kind in (TopicKind.CONTRIBUTION, TopicKind.PUBLICATION, TopicKind.REJECTION)
        ]
        if any(d.name in self._topics for d in descriptors):
            raise AlreadyDeclared(f"domain '{domain}' already declared")
        for d in descriptors:
            self.declare(d)
        return descriptors

    def get(self, name: str) -> Optional[TopicDescriptor]:
        return self._topics.get(name)

    def require(self, name: str) -> TopicDescriptor:
        desc = self._topics.get(name)
        if desc is None:
            raise UnknownTopic(f"unknown topic '{name}'", ref=name)
        return desc

    def has_domain(self, domain: str) -> bool:
        desc = self._topics.get(f"{domain}.{TopicKind.CONTRIBUTION.value}")
        return desc is not None and desc.domain == domain

    def domains(self) -> List[str]:
        return sorted(d.domain for d in self._topics.values() if d.kind is TopicKind.CONTRIBUTION)

    def get_topic_definitions(self) -> List[TopicDescriptor]:
        return sorted(self._topics.values(), key=lambda d: d.name)

    def __contains__(self, name: object) -> bool:
        return name in self._topics

    def __len__(self) -> int:
        return len(self._topics)
