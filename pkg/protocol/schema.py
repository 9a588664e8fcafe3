"""Message schemas: a small line-oriented definition language and a validator.

    # QNH updates from the met source
    message met.update v1
    field qnh int required min=900 max=1100
    field station string optional pattern=/[A-Z]{4}/
    field legs.*.fix string required

``*`` in a field path matches any index segment. Validation collects every
violation instead of stopping at the first one.
"""

import re
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from .document import SEGMENT_RE, Document, Value, ValueKind, kind_of
from .errors import DuplicateFieldPath, DuplicateSchema, ProtocolSyntaxError

WILDCARD = "*"
_TYPE_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*(?:\.[a-z][a-z0-9_]*)*$")
_VERSION_RE = re.compile(r"^v([0-9]+)$")
_PATTERN_OPT_RE = re.compile(r"pattern=/((?:[^/\\]|\\.)*)/")
_DSL_KINDS = {k.value: k for k in (ValueKind.TEXT, ValueKind.INTEGER, ValueKind.DECIMAL, ValueKind.BOOLEAN)}


class ViolationKind(str, Enum):
    MISSING_REQUIRED = "missing-required"
    WRONG_KIND = "wrong-kind"
    CONSTRAINT_FAILED = "constraint-failed"
    UNKNOWN_FIELD = "unknown-field"
    UNKNOWN_TYPE = "unknown-type"


class Violation(BaseModel):
    """One validation finding; ``str()`` gives the one-line wire form."""

    model_config = ConfigDict(frozen=True)

    kind: ViolationKind
    path: str
    constraint: Optional[str] = None

    def __str__(self) -> str:
        text = f"{self.kind.value} {self.path}"
        return f"{text} {self.constraint}" if self.constraint else text


def MissingRequired(path: str) -> Violation:
    return Violation(kind=ViolationKind.MISSING_REQUIRED, path=path)


def WrongKind(path: str) -> Violation:
    return Violation(kind=ViolationKind.WRONG_KIND, path=path)


def ConstraintFailed(path: str, constraint: str) -> Violation:
    return Violation(kind=ViolationKind.CONSTRAINT_FAILED, path=path, constraint=constraint)


def UnknownField(path: str) -> Violation:
    return Violation(kind=ViolationKind.UNKNOWN_FIELD, path=path)


def UnknownType(type_name: str) -> Violation:
    return Violation(kind=ViolationKind.UNKNOWN_TYPE, path=type_name)


class FieldRule(BaseModel):
    """Rule for one (possibly wildcard) path of a message type."""

    model_config = ConfigDict(frozen=True)

    path: str
    kind: ValueKind
    required: bool = True
    allowed_values: Optional[Tuple[str, ...]] = None
    min_value: Optional[Decimal] = None
    max_value: Optional[Decimal] = None
    pattern: Optional[str] = None

    @property
    def segments(self) -> List[str]:
        return self.path.split(".")

    @property
    def is_wildcard(self) -> bool:
        return WILDCARD in self.segments

    @property
    def first_instance(self) -> str:
        """The path with every ``*`` at index 0."""
        return ".".join("0" if seg == WILDCARD else seg for seg in self.segments)

    def matches(self, path: str) -> bool:
        """True iff segments align, with ``*`` matching any index segment."""
        return _segments_match(self.segments, path.split("."))

    def targets(self, doc: Document) -> List[str]:
        """Concrete document paths this rule speaks about."""
        if not self.is_wildcard:
            return [self.path]
        rule = self.segments
        last = max(i for i, seg in enumerate(rule) if seg == WILDCARD)
        found: List[str] = []
        for path in doc:
            segs = path.split(".")
            if len(segs) <= last or not _segments_match(rule[:last + 1], segs[:last + 1]):
                continue
            if last == len(rule) - 1 and len(segs) != len(rule):
                continue
            target = ".".join(segs[:last + 1] + rule[last + 1:])
            if target not in found:
                found.append(target)
        return found


def _segments_match(rule: List[str], segs: List[str]) -> bool:
    if len(rule) != len(segs):
        return False
    return all(r == s or (r == WILDCARD and s.isdigit()) for r, s in zip(rule, segs))


class MessageSchema(BaseModel):
    type_name: str
    version: int
    rules: List[FieldRule] = Field(default_factory=list)

    def rule_for(self, path: str) -> Optional[FieldRule]:
        return next((r for r in self.rules if r.matches(path)), None)


class SchemaSet:
    """All known message schemas, keyed by (type name, version)."""

    def __init__(self, schemas: Iterable[MessageSchema] = ()):
        self._schemas: Dict[Tuple[str, int], MessageSchema] = {}
        for schema in schemas:
            self.add(schema)

    def add(self, schema: MessageSchema, line: Optional[int] = None) -> None:
        key = (schema.type_name, schema.version)
        existing = self._schemas.get(key)
        if existing is not None and existing != schema:
            raise DuplicateSchema(f"message {schema.type_name} v{schema.version} defined twice", line)
        self._schemas[key] = schema

    def merge(self, other: "SchemaSet") -> "SchemaSet":
        merged = SchemaSet(self)
        for schema in other:
            merged.add(schema)
        return merged

    def get(self, type_name: str, version: Optional[int] = None) -> Optional[MessageSchema]:
        """Exact version, or the highest version when ``version`` is None."""
        if version is not None:
            return self._schemas.get((type_name, version))
        versions = [v for (t, v) in self._schemas if t == type_name]
        return self._schemas[(type_name, max(versions))] if versions else None

    def __contains__(self, type_name: object) -> bool:
        return any(t == type_name for t, _ in self._schemas)

    def __iter__(self):
        return iter(self._schemas.values())

    def __len__(self) -> int:
        return len(self._schemas)


# --- DSL ------------------------------------------------------------------------

def _parse_number(token: str, line: int) -> Decimal:
    try:
        return Decimal(token)
    except InvalidOperation:
        raise ProtocolSyntaxError(f"bad number {token!r}", line) from None


def _parse_field(rest: str, line: int) -> FieldRule:
    parts = rest.split(None, 3)
    if len(parts) < 3:
        raise ProtocolSyntaxError("expected 'field <path> <kind> <required|optional>'", line)
    path, kind_name, presence = parts[:3]
    options = parts[3] if len(parts) > 3 else ""
    if not all(seg == WILDCARD or SEGMENT_RE.match(seg) for seg in path.split(".")):
        raise ProtocolSyntaxError(f"bad field path {path!r}", line)
    kind = _DSL_KINDS.get(kind_name)
    if kind is None:
        raise ProtocolSyntaxError(f"unknown kind {kind_name!r}", line)
    if presence not in ("required", "optional"):
        raise ProtocolSyntaxError(f"expected required|optional, got {presence!r}", line)

    values = {}
    pattern_match = _PATTERN_OPT_RE.search(options)
    if pattern_match:
        values["pattern"] = pattern_match.group(1).replace("\\/", "/")
        options = options[:pattern_match.start()] + options[pattern_match.end():]
        try:
            re.compile(values["pattern"])
        except re.error as e:
            raise ProtocolSyntaxError(f"bad pattern: {e}", line) from None
    for token in options.split():
        if token.startswith("enum(") and token.endswith(")"):
            values["allowed_values"] = tuple(v for v in token[5:-1].split("|") if v)
        elif token.startswith("min="):
            values["min_value"] = _parse_number(token[4:], line)
        elif token.startswith("max="):
            values["max_value"] = _parse_number(token[4:], line)
        else:
            raise ProtocolSyntaxError(f"unknown option {token!r}", line)

    numeric = kind in (ValueKind.INTEGER, ValueKind.DECIMAL)
    if ("min_value" in values or "max_value" in values) and not numeric:
        raise ProtocolSyntaxError("min/max apply to int and decimal fields only", line)
    if "pattern" in values and kind is not ValueKind.TEXT:
        raise ProtocolSyntaxError("pattern applies to string fields only", line)
    if "allowed_values" in values and kind not in (ValueKind.TEXT, ValueKind.INTEGER):
        raise ProtocolSyntaxError("enum applies to string and int fields only", line)
    return FieldRule(path=path, kind=kind, required=presence == "required", **values)


def parse_schema_set(text: str) -> SchemaSet:
    """Parse every ``message`` block of a schema file."""
    schemas = SchemaSet()
    current: Optional[MessageSchema] = None
    start_line = 0

    def close() -> None:
        if current is not None:
            schemas.add(current, start_line)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        keyword, _, rest = line.partition(" ")
        if keyword == "message":
            close()
            parts = rest.split()
            if len(parts) != 2 or not _TYPE_NAME_RE.match(parts[0]) or not _VERSION_RE.match(parts[1]):
                raise ProtocolSyntaxError("expected 'message <type> v<int>'", lineno)
            version = int(_VERSION_RE.match(parts[1]).group(1))
            if schemas.get(parts[0], version) is not None:
                raise DuplicateSchema(f"message {parts[0]} v{version} defined twice", lineno)
            current = MessageSchema(type_name=parts[0], version=version)
            start_line = lineno
        elif keyword == "field":
            if current is None:
                raise ProtocolSyntaxError("field outside of a message block", lineno)
            rule = _parse_field(rest, lineno)
            if any(r.path == rule.path for r in current.rules):
                raise DuplicateFieldPath(f"field '{rule.path}' defined twice", lineno)
            current.rules.append(rule)
        else:
            raise ProtocolSyntaxError(f"unknown keyword {keyword!r}", lineno)
    close()
    return schemas


def load_schema_files(entries: Iterable[Union[str, Path]]) -> SchemaSet:
    """Load schema files; directories contribute every ``*.schema`` inside."""
    result = SchemaSet()
    for entry in entries:
        path = Path(entry)
        files = sorted(path.glob("*.schema")) if path.is_dir() else [path]
        for file in files:
            result = result.merge(parse_schema_set(file.read_text(encoding="utf-8")))
    return result


# --- validation ---------------------------------------------------------------------

def _constraint_failures(value: Value, rule: FieldRule) -> List[str]:
    failed = []
    if rule.allowed_values is not None and str(value) not in rule.allowed_values:
        failed.append(f"enum({'|'.join(rule.allowed_values)})")
    if rule.min_value is not None and Decimal(value) < rule.min_value:
        failed.append(f"min={rule.min_value}")
    if rule.max_value is not None and Decimal(value) > rule.max_value:
        failed.append(f"max={rule.max_value}")
    if rule.pattern is not None and re.fullmatch(rule.pattern, value) is None:
        failed.append(f"pattern=/{rule.pattern}/")
    return failed


def validate(doc: Document, type_name: str, schemas: SchemaSet, strict: bool = True,
             version: Optional[int] = None) -> List[Violation]:
    """Return every violation of ``doc`` against the schema; empty means valid."""
    schema = schemas.get(type_name, version)
    if schema is None:
        return [UnknownType(type_name)]

    violations: List[Violation] = []
    for rule in schema.rules:
        targets = rule.targets(doc)
        if not targets and rule.required:
            violations.append(MissingRequired(rule.first_instance))
        for path in targets:
            value = doc.get(path)
            if value is None:
                if rule.required:
                    violations.append(MissingRequired(path))
                continue
            if kind_of(value) is not rule.kind:
                violations.append(WrongKind(path))
                continue
            for constraint in _constraint_failures(value, rule):
                violations.append(ConstraintFailed(path, constraint))

    if strict:
        for path in doc:
            if schema.rule_for(path) is None:
                violations.append(UnknownField(path))
    return violations
