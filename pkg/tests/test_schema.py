"""Tests for the schema language and validator."""

import re
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ats_sim.world import DATA_DIR
from protocol import Document, SchemaSet, load_schema_files, parse_schema_set, validate
from protocol.document import ValueKind
from protocol.errors import DuplicateFieldPath, DuplicateSchema, ProtocolSyntaxError
from protocol.schema import ViolationKind

SCHEMA_TEXT = """
# legs of a route
message route.update v1
field callsign string required pattern=/[A-Z0-9]{2,7}/
field level int optional min=0 max=600
field speed decimal optional min=0.5
field mode string optional enum(ifr|vfr)
field legs.*.fix string required
field legs.*.alt int optional

message route.update v2
field callsign string required
"""


@pytest.fixture
def route_schemas():
    return parse_schema_set(SCHEMA_TEXT)


def kinds(violations):
    return sorted((v.kind, v.path) for v in violations)


def test_valid_document(route_schemas):
    doc = Document({"callsign": "DLH1", "level": 350, "legs.0.fix": "RID", "legs.1.fix": "DKB"})
    assert validate(doc, "route.update", route_schemas, version=1) == []


def test_highest_version_by_default(route_schemas):
    assert route_schemas.get("route.update").version == 2
    assert validate(Document({"callsign": "X1"}), "route.update", route_schemas) == []


def test_collects_every_violation(route_schemas):
    doc = Document({"level": 700, "mode": "spaceflight", "legs.0.fix": 5, "extra": True, "speed": 1})
    found = kinds(validate(doc, "route.update", route_schemas, version=1))
    assert found == sorted([
        (ViolationKind.MISSING_REQUIRED, "callsign"),
        (ViolationKind.CONSTRAINT_FAILED, "level"),
        (ViolationKind.CONSTRAINT_FAILED, "mode"),
        (ViolationKind.WRONG_KIND, "legs.0.fix"),
        (ViolationKind.UNKNOWN_FIELD, "extra"),
        (ViolationKind.WRONG_KIND, "speed"),
    ])


def test_null_does_not_satisfy_required(route_schemas):
    doc = Document({"callsign": None, "legs.0.fix": "RID"})
    found = kinds(validate(doc, "route.update", route_schemas, version=1))
    assert found == [(ViolationKind.MISSING_REQUIRED, "callsign")]


def test_required_wildcard_needs_an_instance(route_schemas):
    found = kinds(validate(Document({"callsign": "DLH1"}), "route.update", route_schemas, version=1))
    assert found == [(ViolationKind.MISSING_REQUIRED, "legs.0.fix")]


def test_wildcard_required_per_index(route_schemas):
    doc = Document({"callsign": "DLH1", "legs.0.fix": "RID", "legs.1.alt": 50})
    found = kinds(validate(doc, "route.update", route_schemas, version=1))
    assert found == [(ViolationKind.MISSING_REQUIRED, "legs.1.fix")]


def test_pattern_must_match_whole_value(route_schemas):
    doc = Document({"callsign": "dlh1", "legs.0.fix": "RID"})
    found = validate(doc, "route.update", route_schemas, version=1)
    assert [str(v) for v in found] == ["constraint-failed callsign pattern=/[A-Z0-9]{2,7}/"]


def test_lenient_mode_ignores_unknown_fields(route_schemas):
    doc = Document({"callsign": "X1", "remark": "hi"})
    assert validate(doc, "route.update", route_schemas, strict=False) == []
    assert kinds(validate(doc, "route.update", route_schemas)) == [(ViolationKind.UNKNOWN_FIELD, "remark")]


def test_unknown_type(route_schemas):
    found = validate(Document(), "met.update", route_schemas)
    assert [v.kind for v in found] == [ViolationKind.UNKNOWN_TYPE]


def test_bundled_schema_file(schemas):
    assert len(schemas) == 8
    ok = Document({"callsign": "DLH123", "aircraft_type": "A320", "adep": "EDDF", "ades": "EDDH", "eobt": 540})
    assert validate(ok, "fpl.create", schemas) == []
    assert validate(Document({"qnh": 1200}), "met.update", schemas)


@pytest.mark.parametrize("text,error", [
    ("field a int required\n", ProtocolSyntaxError),
    ("message a v1\nfield a float required\n", ProtocolSyntaxError),
    ("message a v1\nfield a string sometimes\n", ProtocolSyntaxError),
    ("message a v1\nfield a string required min=1\n", ProtocolSyntaxError),
    ("message a v1\nfield a int required pattern=/x/\n", ProtocolSyntaxError),
    ("message a v1\nfield a string required pattern=/(/\n", ProtocolSyntaxError),
    ("message A v1\n", ProtocolSyntaxError),
    ("message a 1\n", ProtocolSyntaxError),
    ("message a v1\nfield a int required\nfield a int optional\n", DuplicateFieldPath),
    ("message a v1\nmessage a v1\n", DuplicateSchema),
    ("schema a v1\n", ProtocolSyntaxError),
])
def test_schema_syntax_errors(text, error):
    with pytest.raises(error):
        parse_schema_set(text)


def test_error_carries_line_number():
    with pytest.raises(ProtocolSyntaxError) as exc:
        parse_schema_set("message a v1\nfield x int required\nfield y float required\n")
    assert exc.value.line == 3


def test_merge_tolerates_identical_and_refuses_conflicting():
    a = parse_schema_set("message a v1\nfield x int required\n")
    same = parse_schema_set("message a v1\nfield x int required\n")
    other = parse_schema_set("message a v1\nfield x string required\n")
    assert len(a.merge(same)) == 1
    with pytest.raises(DuplicateSchema):
        a.merge(other)
    assert isinstance(a.merge(SchemaSet()), SchemaSet)


BUNDLED = load_schema_files([DATA_DIR])
FLAT_SCHEMAS = sorted((s for s in BUNDLED if not any(r.is_wildcard for r in s.rules)), key=lambda s: s.type_name)
WORDS = st.text(st.characters(min_codepoint=ord("a"), max_codepoint=ord("z")), min_size=1, max_size=12)
ONE_OF_EACH_KIND = {
    ValueKind.TEXT: "x",
    ValueKind.INTEGER: 7,
    ValueKind.DECIMAL: Decimal("1.5"),
    ValueKind.BOOLEAN: True,
}


def valid_values(rule):
    if rule.allowed_values is not None:
        return st.sampled_from(rule.allowed_values)
    if rule.kind is ValueKind.TEXT:
        return st.from_regex(rule.pattern, fullmatch=True) if rule.pattern else WORDS
    if rule.kind is ValueKind.INTEGER:
        low = int(rule.min_value) if rule.min_value is not None else -10**6
        high = int(rule.max_value) if rule.max_value is not None else 10**6
        return st.integers(low, high)
    if rule.kind is ValueKind.DECIMAL:
        low = rule.min_value if rule.min_value is not None else Decimal(-1000)
        high = rule.max_value if rule.max_value is not None else Decimal(1000)
        return st.decimals(low, high, places=2, allow_nan=False, allow_infinity=False)
    return st.booleans()


@st.composite
def valid_documents(draw, schema):
    entries = {}
    for rule in schema.rules:
        if rule.required or draw(st.booleans()):
            entries[rule.path] = draw(valid_values(rule))
    return Document(entries)


def mutations(rule):
    """(expected violation, strategy for the replacement value; None removes the field)."""
    wrong_kind = [v for k, v in ONE_OF_EACH_KIND.items() if k is not rule.kind]
    found = [(ViolationKind.WRONG_KIND, st.sampled_from(wrong_kind))]
    if rule.required:
        found.append((ViolationKind.MISSING_REQUIRED, None))
    if rule.pattern is not None:
        pattern = rule.pattern
        found.append((ViolationKind.CONSTRAINT_FAILED,
                      st.text(max_size=10).filter(lambda s: re.fullmatch(pattern, s) is None)))
    if rule.allowed_values is not None:
        allowed = rule.allowed_values
        found.append((ViolationKind.CONSTRAINT_FAILED, WORDS.filter(lambda s: s not in allowed)))
    if rule.kind is ValueKind.INTEGER and rule.min_value is not None:
        low = int(rule.min_value)
        found.append((ViolationKind.CONSTRAINT_FAILED, st.integers(low - 1000, low - 1)))
    if rule.kind is ValueKind.INTEGER and rule.max_value is not None:
        high = int(rule.max_value)
        found.append((ViolationKind.CONSTRAINT_FAILED, st.integers(high + 1, high + 1000)))
    return found


@settings(max_examples=500, deadline=None)
@given(st.data())
def test_generated_bundled_documents_are_valid(data):
    schema = data.draw(st.sampled_from(FLAT_SCHEMAS))
    doc = data.draw(valid_documents(schema))
    assert validate(doc, schema.type_name, BUNDLED, version=schema.version) == []


@settings(max_examples=2000, deadline=None)
@given(st.data())
def test_every_mutation_is_reported_at_its_path(data):
    schema = data.draw(st.sampled_from(FLAT_SCHEMAS))
    doc = data.draw(valid_documents(schema))
    rule = data.draw(st.sampled_from(schema.rules))
    expected, replacement = data.draw(st.sampled_from(mutations(rule)))
    if replacement is None:
        mutated = doc.without([rule.path])
    else:
        mutated = doc.updated({rule.path: data.draw(replacement)})

    found = validate(mutated, schema.type_name, BUNDLED, version=schema.version)
    assert found, f"{schema.type_name}: {rule.path} {expected.value} went unnoticed"
    assert {v.path for v in found} == {rule.path}
    assert expected in {v.kind for v in found}
