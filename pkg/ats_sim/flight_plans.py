"""Flight plans and QNH: the demo's owned data, as pure functions.

The owner serializes contributions in arrival order; every contribution
produces exactly one output, either the full record on ``fpl.publication`` or
a rejection on ``fpl.rejection``. Replicas mirror publications and drop
anything whose revision they have already seen.
"""

import random
import re
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError

from broker.models import TopicKind
from client_sdk.session import OwnerOutput
from protocol import Document, Envelope
from protocol.errors import BadLegacyLine

FPL_DOMAIN = "fpl"
MET_DOMAIN = "met"
CREATE, UPDATE, DELETE = "fpl.create", "fpl.update", "fpl.delete"
RECORD_TYPE = "fpl.record"
REJECTION_TYPE = "fpl.rejection"
QNH_TYPE = "met.update"
MET_REJECTION_TYPE = "met.rejection"
SELECTION_TOPIC = "selection"
SELECTION_TYPE = "selection.update"

CALLSIGN_RE = re.compile(r"^[A-Z0-9]{2,7}$")
QNH_MIN, QNH_MAX = 900, 1100


class FlightStatus(str, Enum):
    FILED = "filed"
    CLEARED = "cleared"
    TAXIING = "taxiing"
    DEPARTED = "departed"
    CANCELLED = "cancelled"


class RejectionReason(str, Enum):
    UNKNOWN_CALLSIGN = "unknown-callsign"
    DUPLICATE_CALLSIGN = "duplicate-callsign"
    INVALID_FIELDS = "invalid-fields"
    UNSUPPORTED_TYPE = "unsupported-type"


# Fields a contribution may set; callsign and revision are managed by the owner.
EDITABLE_FIELDS = ("aircraft_type", "adep", "ades", "runway", "eobt", "squawk", "status")


class FlightPlan(BaseModel):
    callsign: str = Field(pattern=r"^[A-Z0-9]{2,7}$")
    aircraft_type: str
    adep: str = Field(pattern=r"^[A-Z]{4}$", description="ICAO departure aerodrome")
    ades: str = Field(pattern=r"^[A-Z]{4}$", description="ICAO destination aerodrome")
    runway: Optional[str] = None
    eobt: int = Field(ge=0, le=1439, description="Estimated off-block time, minutes since midnight")
    squawk: Optional[str] = Field(default=None, pattern=r"^[0-7]{4}$")
    status: FlightStatus = FlightStatus.FILED
    revision: int = Field(default=1, ge=1)

    def to_document(self) -> Document:
        data = self.model_dump(mode="json", exclude_none=True)
        return Document(sorted(data.items()))

    @classmethod
    def from_document(cls, doc: Document) -> "FlightPlan":
        return cls(**doc.to_dict())


class FplState(BaseModel):
    """The owner's view: active plans plus the last revision ever published per callsign."""

    plans: Dict[str, FlightPlan] = Field(default_factory=dict)
    last_revision: Dict[str, int] = Field(default_factory=dict)


def _rejection(reason: RejectionReason, contribution_type: str, callsign: Optional[str],
               detail: str = "") -> OwnerOutput:
    entries = {"reason": reason.value, "contribution_type": contribution_type}
    if callsign:
        entries["callsign"] = callsign
    if detail:
        entries["detail"] = detail
    return OwnerOutput(kind=TopicKind.REJECTION, message_type=REJECTION_TYPE, payload=Document(sorted(entries.items())))


def _publication(plan: FlightPlan) -> OwnerOutput:
    return OwnerOutput(kind=TopicKind.PUBLICATION, message_type=RECORD_TYPE, payload=plan.to_document())


def fpl_owner_apply(state: FplState, contribution: Envelope) -> Tuple[FplState, List[OwnerOutput]]:
    """Process one contribution; returns the new state and exactly one output."""
    kind = contribution.message_type
    payload = contribution.payload
    callsign = payload.get("callsign")
    if kind not in (CREATE, UPDATE, DELETE):
        return state, [_rejection(RejectionReason.UNSUPPORTED_TYPE, kind, callsign)]
    if not isinstance(callsign, str):
        return state, [_rejection(RejectionReason.INVALID_FIELDS, kind, None, "callsign missing")]

    current = state.plans.get(callsign)
    revision = state.last_revision.get(callsign, 0) + 1
    if kind == CREATE:
        if current is not None:
            return state, [_rejection(RejectionReason.DUPLICATE_CALLSIGN, kind, callsign)]
        fields = {k: payload[k] for k in EDITABLE_FIELDS if k in payload}
        fields.pop("status", None)
        if "status" in payload and payload["status"] != FlightStatus.CANCELLED.value:
            fields["status"] = payload["status"]
    elif current is None:
        return state, [_rejection(RejectionReason.UNKNOWN_CALLSIGN, kind, callsign)]
    elif kind == UPDATE:
        if payload.get("status") == FlightStatus.CANCELLED.value:
            return state, [_rejection(RejectionReason.INVALID_FIELDS, kind, callsign, "cancel with fpl.delete")]
        fields = current.model_dump(exclude={"callsign", "revision"}, exclude_none=True)
        fields.update({k: payload[k] for k in EDITABLE_FIELDS if k in payload})
    else:
        fields = current.model_dump(exclude={"callsign", "revision"}, exclude_none=True)
        fields["status"] = FlightStatus.CANCELLED

    try:
        plan = FlightPlan(callsign=callsign, revision=revision, **fields)
    except (ValidationError, TypeError) as e:
        return state, [_rejection(RejectionReason.INVALID_FIELDS, kind, callsign, str(e).splitlines()[0])]

    plans = dict(state.plans)
    if plan.status is FlightStatus.CANCELLED:
        plans.pop(callsign, None)
    else:
        plans[callsign] = plan
    last_revision = {**state.last_revision, callsign: revision}
    return FplState(plans=plans, last_revision=last_revision), [_publication(plan)]


def reference_reduce(contributions: Iterable[Tuple[str, Document]]) -> Dict[str, FlightPlan]:
    """Straight sequential replay of (message type, payload) pairs into the final plan map.

    Written independently of ``fpl_owner_apply`` so the two can be compared.
    """
    plans: Dict[str, dict] = {}
    revisions: Dict[str, int] = {}
    for kind, payload in contributions:
        callsign = payload.get("callsign")
        if kind == CREATE and callsign not in plans:
            record = {k: v for k, v in payload.items() if k in EDITABLE_FIELDS}
            if record.get("status") == "cancelled":
                record.pop("status")
            candidate = {"status": "filed", **record}
        elif kind == UPDATE and callsign in plans and payload.get("status") != "cancelled":
            candidate = {**plans[callsign], **{k: v for k, v in payload.items() if k in EDITABLE_FIELDS}}
        elif kind == DELETE and callsign in plans:
            revisions[callsign] += 1
            del plans[callsign]
            continue
        else:
            continue
        try:
            FlightPlan(callsign=callsign, **candidate)
        except (ValidationError, TypeError):
            continue
        revisions[callsign] = revisions.get(callsign, 0) + 1
        plans[callsign] = candidate
    return {cs: FlightPlan(callsign=cs, revision=revisions[cs], **fields) for cs, fields in plans.items()}


# --- replicas ------------------------------------------------------------------------

class Replica(BaseModel):
    """A CWP's mirror of the published state."""

    plans: Dict[str, FlightPlan] = Field(default_factory=dict)
    revisions: Dict[str, int] = Field(default_factory=dict)
    qnh: Optional[int] = None
    ignored: int = 0


def cwp_apply(replica: Replica, publication: Envelope) -> Replica:
    if publication.message_type == QNH_TYPE:
        return replica.model_copy(update={"qnh": publication.payload["qnh"]})
    if publication.message_type != RECORD_TYPE:
        return replica
    plan = FlightPlan.from_document(publication.payload)
    if plan.revision <= replica.revisions.get(plan.callsign, 0):
        return replica.model_copy(update={"ignored": replica.ignored + 1})
    plans = dict(replica.plans)
    if plan.status is FlightStatus.CANCELLED:
        plans.pop(plan.callsign, None)
    else:
        plans[plan.callsign] = plan
    revisions = {**replica.revisions, plan.callsign: plan.revision}
    return replica.model_copy(update={"plans": plans, "revisions": revisions})


# --- QNH ---------------------------------------------------------------------------------

class QnhState(BaseModel):
    seed: int = 0
    period_ms: int = Field(default=60000, gt=0)
    value: int = Field(default=1013, ge=QNH_MIN, le=QNH_MAX)
    next_due: Optional[int] = None
    ticks: int = 0
    max_step: int = Field(default=2, ge=0)


def qnh_source_tick(state: QnhState, now: int) -> Tuple[QnhState, Optional[Document]]:
    """Publish once per period; the value takes a seeded bounded random walk."""
    due = state.period_ms if state.next_due is None else state.next_due
    if now < due:
        return state.model_copy(update={"next_due": due}), None
    rng = random.Random(state.seed * 1_000_003 + state.ticks)
    value = min(QNH_MAX, max(QNH_MIN, state.value + rng.randint(-state.max_step, state.max_step)))
    new_state = state.model_copy(update={"value": value, "next_due": due + state.period_ms,
                                         "ticks": state.ticks + 1})
    return new_state, Document({"qnh": value})


# --- legacy feed -------------------------------------------------------------------------

LEGACY_COLUMNS = (("callsign", 7), ("aircraft_type", 4), ("adep", 4), ("ades", 4), ("eobt", 4))
LEGACY_WIDTH = sum(width for _, width in LEGACY_COLUMNS)
_COLUMN_RE = {
    "callsign": CALLSIGN_RE,
    "aircraft_type": re.compile(r"^[A-Z0-9]{2,4}$"),
    "adep": re.compile(r"^[A-Z]{4}$"),
    "ades": re.compile(r"^[A-Z]{4}$"),
    "eobt": re.compile(r"^[0-9]{4}$"),
}


def legacy_agent_translate(line: str, known_callsigns: Iterable[str] = ()) -> Tuple[str, Document]:
    """Fixed-width legacy record -> (fpl.create | fpl.update, payload).

    Columns: callsign 7 (space padded), aircraft type 4, departure 4,
    destination 4, EOBT 4 digits in minutes since midnight.
    """
    record = line.rstrip("\r\n")
    if len(record) != LEGACY_WIDTH:
        raise BadLegacyLine(f"expected {LEGACY_WIDTH} characters, got {len(record)}")
    fields: Dict[str, object] = {}
    offset = 0
    for name, width in LEGACY_COLUMNS:
        raw = record[offset:offset + width]
        offset += width
        value = raw.rstrip(" ") if name in ("callsign", "aircraft_type") else raw
        if not _COLUMN_RE[name].match(value):
            raise BadLegacyLine(f"bad {name} column {raw!r}")
        fields[name] = value
    eobt = int(fields["eobt"])
    if eobt > 1439:
        raise BadLegacyLine(f"eobt {eobt} is not a minute of the day")
    fields["eobt"] = eobt
    kind = UPDATE if fields["callsign"] in set(known_callsigns) else CREATE
    return kind, Document(sorted(fields.items()))
