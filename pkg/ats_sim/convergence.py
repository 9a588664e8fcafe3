"""Convergence and completeness checks over a settled world."""

from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from shared_utils.metrics import evaluate_delivery

from .flight_plans import FPL_DOMAIN, MET_DOMAIN, FlightPlan
from .world import SimWorld


class ConvergenceReport(BaseModel):
    domain: str
    checked: List[str] = Field(default_factory=list)
    skipped: Dict[str, str] = Field(default_factory=dict, description="CWP -> why it is not compared")
    diffs: List[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.diffs

    def __str__(self) -> str:
        head = f"{self.domain}: {len(self.checked)} replicas checked"
        if self.ok:
            return f"{head}, converged"
        return "\n".join([f"{head}, {len(self.diffs)} differences", *self.diffs])


def _eligibility(world: SimWorld, domain: str) -> Tuple[List[str], Dict[str, str]]:
    topic = f"{domain}.publication"
    checked, skipped = [], {}
    for name in sorted(world.cwps):
        cwp = world.cwps[name]
        link = world.links.get(f"bridge-{name}@central")
        if topic not in cwp.subscriptions:
            skipped[name] = "not subscribed"
        elif cwp.late:
            skipped[name] = "subscribed late"
        elif not cwp.session.connected:
            skipped[name] = "disconnected"
        elif world.hierarchy.bridge(name) is None:
            skipped[name] = "detached"
        elif link is not None and link.partitioned:
            skipped[name] = "partitioned"
        else:
            checked.append(name)
    return checked, skipped


def _plan_diff(name: str, callsign: str, expected: Optional[FlightPlan], actual: Optional[FlightPlan]) -> str:
    if actual is None:
        return f"{name}: {callsign} missing (owner rev {expected.revision})"
    if expected is None:
        return f"{name}: {callsign} not held by the owner (replica rev {actual.revision})"
    fields = [k for k in FlightPlan.model_fields if getattr(expected, k) != getattr(actual, k)]
    return f"{name}: {callsign} differs in {', '.join(fields)} (owner rev {expected.revision}, replica rev {actual.revision})"


def check_convergence(world: SimWorld, domain: str = FPL_DOMAIN) -> ConvergenceReport:
    """Compare every eligible replica with the owner's state."""
    checked, skipped = _eligibility(world, domain)
    report = ConvergenceReport(domain=domain, checked=checked, skipped=skipped)
    for name in checked:
        replica = world.cwps[name].replica
        if domain == FPL_DOMAIN:
            owner_plans = world.owner.state.plans
            for callsign in sorted(set(owner_plans) | set(replica.plans)):
                expected, actual = owner_plans.get(callsign), replica.plans.get(callsign)
                if expected != actual:
                    report.diffs.append(_plan_diff(name, callsign, expected, actual))
        elif domain == MET_DOMAIN:
            expected = world.qnh.published[-1] if world.qnh.published else None
            if replica.qnh != expected:
                report.diffs.append(f"{name}: qnh {replica.qnh} (owner {expected})")
        else:
            raise ValueError(f"no convergence check for domain '{domain}'")
    return report


def assert_converged(world: SimWorld, domain: str = FPL_DOMAIN) -> ConvergenceReport:
    """Raise AssertionError with the per-callsign diff unless every eligible replica matches."""
    report = check_convergence(world, domain)
    if not report.ok:
        raise AssertionError(str(report))
    return report


def rejection_completeness(world: SimWorld) -> Dict[str, float]:
    """Contributions sent versus owner outputs; exactly-once means one output each."""
    expected = [mid for cwp in world.cwps.values() for mid in cwp.contributed[FPL_DOMAIN]]
    if world.legacy is not None:
        expected.extend(world.legacy.contributed)
    actual = [mid for mid, outputs in world.owner.outputs.items() for _ in outputs]
    return evaluate_delivery(expected, actual)
