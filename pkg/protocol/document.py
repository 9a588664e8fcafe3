"""Plain-text documents: the payload of every message.

A document is an ordered map of dotted paths to scalar values. Its canonical
encoding is one ``path = value`` line per entry, sorted bytewise by path::

    callsign = "DLH123"
    eobt = 540

Values are text, 64-bit integers, base-10 decimals, booleans or null. Decimals
are never binary floats, so encodings round-trip exactly.
"""

import re
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

from .errors import DuplicatePath, ProtocolSyntaxError

Value = Union[str, int, Decimal, bool, None]

INT_MIN = -(2 ** 63)
INT_MAX = 2 ** 63 - 1
MAX_DECIMAL_DIGITS = 15

_SEGMENT = r"(?:[a-z][a-z0-9_]*|0|[1-9][0-9]*)"
PATH_RE = re.compile(rf"^{_SEGMENT}(?:\.{_SEGMENT})*$")
SEGMENT_RE = re.compile(rf"^{_SEGMENT}$")
_INT_RE = re.compile(r"^-?[0-9]+$")
_DEC_RE = re.compile(r"^-?[0-9]+\.[0-9]+$")

_ESCAPES = {'"': '\\"', "\\": "\\\\", "\n": "\\n", "\t": "\\t"}
_UNESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}


class ValueKind(str, Enum):
    """Scalar kinds; the values are the schema DSL spellings."""
    TEXT = "string"
    INTEGER = "int"
    DECIMAL = "decimal"
    BOOLEAN = "bool"
    NULL = "null"


def kind_of(value: Any) -> ValueKind:
    """Return the kind of a document value (bool is checked before int)."""
    if value is None:
        return ValueKind.NULL
    if isinstance(value, bool):
        return ValueKind.BOOLEAN
    if isinstance(value, int):
        return ValueKind.INTEGER
    if isinstance(value, Decimal):
        return ValueKind.DECIMAL
    if isinstance(value, str):
        return ValueKind.TEXT
    raise TypeError(f"unsupported document value {value!r} ({type(value).__name__})")


def is_valid_path(path: str) -> bool:
    return isinstance(path, str) and PATH_RE.match(path) is not None


def check_value(value: Any) -> Value:
    """Range-check a value; raises ValueError/TypeError for unrepresentable ones."""
    kind = kind_of(value)
    if kind is ValueKind.INTEGER and not INT_MIN <= value <= INT_MAX:
        raise ValueError(f"integer {value} outside 64-bit range")
    if kind is ValueKind.DECIMAL:
        if not value.is_finite():
            raise ValueError(f"decimal {value} is not finite")
        if len(value.normalize().as_tuple().digits) > MAX_DECIMAL_DIGITS:
            raise ValueError(f"decimal {value} exceeds {MAX_DECIMAL_DIGITS} significant digits")
    return value


def _same(a: Value, b: Value) -> bool:
    return kind_of(a) is kind_of(b) and a == b


class Document(Mapping[str, Value]):
    """Immutable ordered path -> value map."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Union[Mapping[str, Value], Iterable[Tuple[str, Value]], None] = None):
        items = entries.items() if isinstance(entries, Mapping) else (entries or ())
        data: Dict[str, Value] = {}
        for path, value in items:
            if not is_valid_path(path):
                raise ValueError(f"invalid document path {path!r}")
            if path in data:
                raise DuplicatePath(f"duplicate path '{path}'")
            data[path] = check_value(value)
        self._entries = data

    def __getitem__(self, path: str) -> Value:
        return self._entries[path]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Document):
            return NotImplemented
        if len(self) != len(other):
            return False
        return all(p in other._entries and _same(v, other._entries[p]) for p, v in self._entries.items())

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Document({self._entries!r})"

    def to_dict(self) -> Dict[str, Value]:
        return dict(self._entries)

    def updated(self, changes: Mapping[str, Value]) -> "Document":
        """Copy with ``changes`` applied; existing paths keep their position."""
        merged = dict(self._entries)
        merged.update(changes)
        return Document(merged)

    def without(self, paths: Iterable[str]) -> "Document":
        drop = set(paths)
        return Document((p, v) for p, v in self._entries.items() if p not in drop)

    def subtree(self, prefix: str) -> "Document":
        """Entries below ``prefix`` with the prefix stripped."""
        head = prefix + "."
        return Document((p[len(head):], v) for p, v in self._entries.items() if p.startswith(head))


# --- values ---------------------------------------------------------------

def _escape(text: str) -> str:
    out = []
    for ch in text:
        if ch in _ESCAPES:
            out.append(_ESCAPES[ch])
        elif ord(ch) < 0x20 or ord(ch) == 0x7F or 0xD800 <= ord(ch) <= 0xDFFF:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return "".join(out)


def _unescape(body: str, line: Optional[int]) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == '"':
            raise ProtocolSyntaxError("unescaped quote in string", line)
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= len(body):
            raise ProtocolSyntaxError("dangling escape", line)
        code = body[i + 1]
        if code in _UNESCAPES:
            out.append(_UNESCAPES[code])
            i += 2
        elif code == "u":
            digits = body[i + 2:i + 6]
            if len(digits) != 4 or not all(c in "0123456789abcdefABCDEF" for c in digits):
                raise ProtocolSyntaxError(f"bad unicode escape '\\u{digits}'", line)
            out.append(chr(int(digits, 16)))
            i += 6
        else:
            raise ProtocolSyntaxError(f"unknown escape '\\{code}'", line)
    return "".join(out)


def format_decimal(value: Decimal) -> str:
    """Shortest fixed-point text that re-parses as an equal decimal."""
    text = format(value.normalize(), "f")
    if "." not in text:
        text += ".0"
    return text


def encode_value(value: Value) -> str:
    kind = kind_of(value)
    if kind is ValueKind.TEXT:
        return f'"{_escape(value)}"'
    if kind is ValueKind.BOOLEAN:
        return "true" if value else "false"
    if kind is ValueKind.NULL:
        return "null"
    if kind is ValueKind.DECIMAL:
        return format_decimal(value)
    return str(value)


def parse_value(token: str, line: Optional[int] = None) -> Value:
    """Parse a single value token of the document grammar."""
    if len(token) >= 2 and token[0] == '"' and token[-1] == '"':
        return _unescape(token[1:-1], line)
    if token == "true":
        return True
    if token == "false":
        return False
    if token == "null":
        return None
    try:
        if _INT_RE.match(token):
            return check_value(int(token))
        if _DEC_RE.match(token):
            return check_value(Decimal(token))
    except (ValueError, InvalidOperation) as e:
        raise ProtocolSyntaxError(str(e), line) from e
    raise ProtocolSyntaxError(f"bad value {token!r}", line)


# --- documents --------------------------------------------------------------

def _sort_key(item: Tuple[str, Value]) -> bytes:
    return item[0].encode("utf-8")


def canonicalize(doc: Document) -> Document:
    """Same entries, sorted bytewise by path."""
    return Document(sorted(doc.items(), key=_sort_key))


def encode_document(doc: Document) -> bytes:
    """Canonical encoding; the empty document encodes to zero bytes."""
    return "".join(
        f"{path} = {encode_value(value)}\n" for path, value in sorted(doc.items(), key=_sort_key)
    ).encode("utf-8")


def parse_document(data: Union[bytes, str]) -> Document:
    """Parse document text in any entry order.

    Blank lines and lines starting with ``#`` are skipped so the same grammar
    serves configuration files.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolSyntaxError(f"invalid UTF-8: {e}") from e
    else:
        text = data
    entries: List[Tuple[str, Value]] = []
    seen = set()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        left, sep, right = raw.partition("=")
        if not sep:
            raise ProtocolSyntaxError("expected 'path = value'", lineno)
        path = left.strip()
        if not is_valid_path(path):
            raise ProtocolSyntaxError(f"bad path {path!r}", lineno)
        value = parse_value(right.strip(), lineno)
        if path in seen:
            raise DuplicatePath(f"duplicate path '{path}'", lineno)
        seen.add(path)
        entries.append((path, value))
    return Document(entries)


def document_from_nested(data: Mapping[str, Any], prefix: str = "") -> Document:
    """Flatten nested dicts/lists into a document (lists become index segments)."""

    def walk(node: Any, path: str) -> Iterator[Tuple[str, Value]]:
        if isinstance(node, Mapping):
            for key, child in node.items():
                yield from walk(child, f"{path}.{key}" if path else str(key))
        elif isinstance(node, (list, tuple)):
            for index, child in enumerate(node):
                yield from walk(child, f"{path}.{index}" if path else str(index))
        else:
            yield path, node

    return Document(walk(data, prefix))
