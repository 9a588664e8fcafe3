"""Central/local broker hierarchy: routing rules, bridges, loop prevention."""

from .bridge import Bridge, BridgeState, bridge_forward
from .hierarchy import Hierarchy
from .rules import Direction, RoutingRule, RuleSet, load_routing_rules, should_forward

__all__ = [
    "Bridge",
    "BridgeState",
    "bridge_forward",
    "Hierarchy",
    "Direction",
    "RoutingRule",
    "RuleSet",
    "load_routing_rules",
    "should_forward",
]
