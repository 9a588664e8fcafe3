"""Routing rules: which topics cross the central/local boundary, and in which direction.

    # flight plans travel both ways, weather only down
    route fpl.* both
    route met.publication down
"""

from enum import Enum
from typing import Iterable, Iterator, List, Optional

from pydantic import BaseModel, ConfigDict

from broker.models import DLQ_SUFFIX, TopicDescriptor, TopicScope
from protocol import Envelope
from protocol.envelope import is_topic_name
from protocol.errors import LocalScopeRule, ProtocolSyntaxError

INTERNAL_PREFIX = "_"


class Direction(str, Enum):
    UP = "up"
    DOWN = "down"
    BOTH = "both"

    def allows(self, direction: "Direction") -> bool:
        return self is Direction.BOTH or self is direction


class RoutingRule(BaseModel):
    model_config = ConfigDict(frozen=True)

    topic_pattern: str
    direction: Direction

    @property
    def is_prefix(self) -> bool:
        return self.topic_pattern.endswith(".*")

    def matches(self, topic: str) -> bool:
        if self.is_prefix:
            # Prefix rules never pick up dead-letter topics; those must be named.
            prefix = self.topic_pattern[:-1]
            return topic.startswith(prefix) and not topic.endswith(DLQ_SUFFIX)
        return topic == self.topic_pattern

    def __str__(self) -> str:
        return f"route {self.topic_pattern} {self.direction.value}"


class RuleSet:
    def __init__(self, rules: Iterable[RoutingRule] = ()):
        self.rules: List[RoutingRule] = list(rules)

    def allows(self, topic: str, direction: Direction) -> bool:
        return any(r.matches(topic) and r.direction.allows(direction) for r in self.rules)

    def __iter__(self) -> Iterator[RoutingRule]:
        return iter(self.rules)

    def __len__(self) -> int:
        return len(self.rules)


def load_routing_rules(text: str, topics: Iterable[TopicDescriptor] = ()) -> RuleSet:
    """Parse a rule file; ``topics`` are the known descriptors used to reject rules on local topics."""
    local = {d.name for d in topics if d.scope is TopicScope.LOCAL}
    rules: List[RoutingRule] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] != "route":
            raise ProtocolSyntaxError("expected 'route <topic|prefix.*> <up|down|both>'", lineno)
        pattern, direction = parts[1], parts[2]
        name = pattern[:-2] if pattern.endswith(".*") else pattern
        if not is_topic_name(name):
            raise ProtocolSyntaxError(f"bad topic pattern {pattern!r}", lineno)
        try:
            rule = RoutingRule(topic_pattern=pattern, direction=Direction(direction))
        except ValueError:
            raise ProtocolSyntaxError(f"bad direction {direction!r}", lineno) from None
        if name.startswith(INTERNAL_PREFIX) or any(rule.matches(t) for t in local):
            raise LocalScopeRule(f"'{pattern}' targets a local-scope topic", lineno)
        rules.append(rule)
    return RuleSet(rules)


def should_forward(env: Envelope, rules: RuleSet, destination: str, direction: Direction,
                   scope: Optional[TopicScope] = None) -> bool:
    """True iff a rule allows the topic in ``direction``, the topic is global and
    ``destination`` has not seen the message yet."""
    if scope is TopicScope.LOCAL or env.topic.startswith(INTERNAL_PREFIX):
        return False
    if destination in env.hop_trace:
        return False
    return rules.allows(env.topic, direction)
