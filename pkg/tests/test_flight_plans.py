"""Tests for the flight plan owner, replicas, the QNH source and the legacy feed."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ats_sim.flight_plans import (
    CREATE,
    DELETE,
    UPDATE,
    FlightStatus,
    FplState,
    QnhState,
    Replica,
    cwp_apply,
    fpl_owner_apply,
    legacy_agent_translate,
    qnh_source_tick,
    reference_reduce,
)
from broker import TopicKind
from protocol import Document
from protocol.errors import BadLegacyLine

from conftest import make_env

DLH123 = {"callsign": "DLH123", "aircraft_type": "A320", "adep": "EDDF", "ades": "EDDH", "eobt": 540}


def contribution(kind, payload, seq=1):
    return make_env("fpl.contribution", seq=seq, message_type=kind, payload=payload)


def apply_all(steps):
    state = FplState()
    outputs = []
    for seq, (kind, payload) in enumerate(steps, start=1):
        state, produced = fpl_owner_apply(state, contribution(kind, payload, seq))
        assert len(produced) == 1
        outputs.append(produced[0])
    return state, outputs


def test_create_publishes_revision_one():
    state, (out,) = apply_all([(CREATE, DLH123)])
    assert out.kind is TopicKind.PUBLICATION
    assert out.message_type == "fpl.record"
    assert out.payload["revision"] == 1
    assert out.payload["status"] == "filed"
    assert state.plans["DLH123"].adep == "EDDF"


def test_update_merges_and_bumps_revision():
    state, outputs = apply_all([
        (CREATE, DLH123),
        (UPDATE, {"callsign": "DLH123", "status": "cleared", "runway": "25R"}),
    ])
    record = outputs[-1].payload
    assert record["revision"] == 2
    assert record["runway"] == "25R"
    assert record["aircraft_type"] == "A320"
    assert state.plans["DLH123"].status is FlightStatus.CLEARED


@pytest.mark.parametrize("steps,reason", [
    ([(UPDATE, {"callsign": "AFR77", "status": "cleared"})], "unknown-callsign"),
    ([(DELETE, {"callsign": "AFR77"})], "unknown-callsign"),
    ([(CREATE, DLH123), (CREATE, DLH123)], "duplicate-callsign"),
    ([(CREATE, {**DLH123, "eobt": 2000})], "invalid-fields"),
    ([(CREATE, DLH123), (UPDATE, {"callsign": "DLH123", "status": "cancelled"})], "invalid-fields"),
    ([(CREATE, {"aircraft_type": "A320"})], "invalid-fields"),
    ([("fpl.teleport", {"callsign": "DLH123"})], "unsupported-type"),
])
def test_rejections(steps, reason):
    state, outputs = apply_all(steps)
    rejection = outputs[-1]
    assert rejection.kind is TopicKind.REJECTION
    assert rejection.payload["reason"] == reason
    assert rejection.payload["contribution_type"] == steps[-1][0]


def test_rejection_leaves_state_alone():
    before, _ = apply_all([(CREATE, DLH123)])
    after, _ = fpl_owner_apply(before, contribution(UPDATE, {"callsign": "DLH123", "eobt": 9000}, seq=2))
    assert after == before


def test_delete_publishes_cancellation_and_keeps_revision_counting():
    state, outputs = apply_all([(CREATE, DLH123), (DELETE, {"callsign": "DLH123"}), (CREATE, DLH123)])
    assert outputs[1].payload["status"] == "cancelled"
    assert outputs[1].payload["revision"] == 2
    assert outputs[2].payload["revision"] == 3
    assert "DLH123" in state.plans


CALLSIGNS = st.sampled_from(["DLH123", "BAW12", "AFR77"])
FIELD_VALUES = st.fixed_dictionaries({}, optional={
    "aircraft_type": st.sampled_from(["A320", "B744", "x"]),
    "adep": st.sampled_from(["EDDF", "EGLL", "bad"]),
    "ades": st.sampled_from(["EDDH", "LFPG"]),
    "eobt": st.integers(min_value=-5, max_value=1500),
    "runway": st.sampled_from(["25R", "07C"]),
    "status": st.sampled_from([s.value for s in FlightStatus]),
})
CONTRIBUTIONS = st.lists(
    st.tuples(st.sampled_from([CREATE, UPDATE, DELETE]), CALLSIGNS, FIELD_VALUES).map(
        lambda t: (t[0], Document({"callsign": t[1], **t[2]}))),
    max_size=25,
)


@settings(max_examples=150, deadline=None)
@given(CONTRIBUTIONS)
def test_owner_matches_sequential_replay(steps):
    state, _ = apply_all(steps)
    assert state.plans == reference_reduce(steps)


@settings(max_examples=100, deadline=None)
@given(CONTRIBUTIONS)
def test_replica_converges_to_owner(steps):
    state, outputs = apply_all(steps)
    replica = Replica()
    published = [o for o in outputs if o.kind is TopicKind.PUBLICATION]
    for seq, out in enumerate(published, start=1):
        replica = cwp_apply(replica, make_env("fpl.publication", sender="fdps", seq=seq,
                                              message_type=out.message_type, payload=out.payload))
    assert replica.plans == state.plans


def test_replica_ignores_stale_revisions():
    _, outputs = apply_all([(CREATE, DLH123), (UPDATE, {"callsign": "DLH123", "status": "cleared"})])
    newer = make_env("fpl.publication", sender="fdps", seq=2, message_type="fpl.record", payload=outputs[1].payload)
    older = make_env("fpl.publication", sender="fdps", seq=1, message_type="fpl.record", payload=outputs[0].payload)
    replica = cwp_apply(cwp_apply(Replica(), newer), older)
    assert replica.plans["DLH123"].status is FlightStatus.CLEARED
    assert replica.ignored == 1


def test_replica_tracks_qnh():
    env = make_env("met.publication", sender="metsrc", message_type="met.update", payload={"qnh": 1009})
    assert cwp_apply(Replica(), env).qnh == 1009


def test_qnh_tick_publishes_once_per_period():
    state = QnhState(seed=7, period_ms=1000)
    state, doc = qnh_source_tick(state, 999)
    assert doc is None
    state, doc = qnh_source_tick(state, 1000)
    assert doc is not None and abs(doc["qnh"] - 1013) <= 2
    state, again = qnh_source_tick(state, 1500)
    assert again is None
    assert state.next_due == 2000


def test_qnh_walk_is_seeded_and_bounded():
    def walk(seed):
        state, values = QnhState(seed=seed, period_ms=10, value=1099, max_step=5), []
        for now in range(10, 2010, 10):
            state, doc = qnh_source_tick(state, now)
            values.append(doc["qnh"])
        return values

    assert walk(3) == walk(3)
    assert all(900 <= v <= 1100 for v in walk(3))


def test_legacy_translate_create_then_update():
    kind, payload = legacy_agent_translate("KLM1234B738EHAMEDDF0815\n")
    assert kind == CREATE
    assert payload == Document({"callsign": "KLM1234", "aircraft_type": "B738", "adep": "EHAM",
                                "ades": "EDDF", "eobt": 815})
    kind, _ = legacy_agent_translate("KLM1234B738EHAMEDDF0830", known_callsigns=["KLM1234"])
    assert kind == UPDATE


def test_legacy_pads_short_fields():
    _, payload = legacy_agent_translate("SAS1   A21 EKCHEDDM0100")
    assert payload["callsign"] == "SAS1"
    assert payload["aircraft_type"] == "A21"


@pytest.mark.parametrize("line", [
    "KLM1234B738EHAMEDDF9999",
    "KLM1234B738EHAMEDDF081",
    "klm1234B738EHAMEDDF0815",
    "KLM1234B738EH4MEDDF0815",
    "KLM1234B738EHAMEDDF08x5",
    "",
])
def test_legacy_bad_lines(line):
    with pytest.raises(BadLegacyLine):
        legacy_agent_translate(line)
