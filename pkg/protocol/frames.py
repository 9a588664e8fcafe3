"""Wire frames.

    ACWP/1 PUBLISH
    topic: fpl.contribution
    message-id: cwp1:1
    ...
    content-length: 42

    <42 body bytes>

Header names are lowercase and unique; ``content-length`` is always present
and counts body bytes.
"""

import re
from enum import Enum
from typing import BinaryIO, Dict, List, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import FrameTooLarge, LengthMismatch, MissingHeader, ProtocolSyntaxError, UnknownCommand

PROTOCOL_TAG = "ACWP/1"
DEFAULT_MAX_FRAME_BYTES = 1024 * 1024
MAX_HEADER_LINE = 8192
_HEADER_NAME_RE = re.compile(r"^[a-z][a-z0-9-]*$")


class Command(str, Enum):
    CONNECT = "CONNECT"
    CONNECTED = "CONNECTED"
    SUBSCRIBE = "SUBSCRIBE"
    UNSUBSCRIBE = "UNSUBSCRIBE"
    PUBLISH = "PUBLISH"
    MESSAGE = "MESSAGE"
    ACK = "ACK"
    OWN = "OWN"
    ERROR = "ERROR"
    PING = "PING"
    PONG = "PONG"
    DISCONNECT = "DISCONNECT"


_PUBLISH_HEADERS = ("topic", "message-id", "sender-id", "message-type", "timestamp")

REQUIRED_HEADERS: Dict[Command, tuple] = {
    Command.CONNECT: ("client-id",),
    Command.SUBSCRIBE: ("topic", "subscription-id"),
    Command.UNSUBSCRIBE: ("subscription-id",),
    Command.PUBLISH: _PUBLISH_HEADERS,
    Command.MESSAGE: _PUBLISH_HEADERS + ("subscription-id", "hop-trace"),
    Command.ACK: ("message-id", "subscription-id"),
    Command.OWN: ("domain",),
    Command.ERROR: ("error-code",),
}


def check_required(command: Command, headers: Mapping[str, str]) -> None:
    for name in REQUIRED_HEADERS.get(command, ()):
        if name not in headers:
            raise MissingHeader(name)


class Frame(BaseModel):
    """One protocol unit: command, headers and an opaque body."""

    model_config = ConfigDict(frozen=True)

    command: Command
    headers: Dict[str, str] = Field(default_factory=dict)
    body: bytes = b""

    @model_validator(mode="after")
    def _check(self) -> "Frame":
        for name, value in self.headers.items():
            if not _HEADER_NAME_RE.match(name):
                raise ValueError(f"bad header name {name!r}")
            if "\n" in value or "\r" in value:
                raise ValueError(f"header {name!r} contains a line break")
        if self.headers.get("content-length") != str(len(self.body)):
            raise ValueError("content-length must equal the body length")
        return self

    @classmethod
    def build(cls, command: Command, headers: Optional[Mapping[str, str]] = None, body: bytes = b"") -> "Frame":
        """Create a frame, filling in ``content-length``."""
        merged = {k: str(v) for k, v in (headers or {}).items() if k != "content-length"}
        merged["content-length"] = str(len(body))
        return cls(command=command, headers=merged, body=body)

    def header(self, name: str, default: Optional[str] = None) -> Optional[str]:
        return self.headers.get(name, default)


def encode_frame(frame: Frame) -> bytes:
    check_required(frame.command, frame.headers)
    lines = [f"{PROTOCOL_TAG} {frame.command.value}\n"]
    for name, value in frame.headers.items():
        if name != "content-length":
            lines.append(f"{name}: {value}\n")
    lines.append(f"content-length: {len(frame.body)}\n\n")
    return "".join(lines).encode("utf-8") + frame.body


def _parse_head(lines: List[str]) -> Tuple[Command, Dict[str, str]]:
    start = lines[0]
    tag, _, name = start.partition(" ")
    if tag != PROTOCOL_TAG or not name:
        raise ProtocolSyntaxError(f"bad start line {start!r}", 1)
    try:
        command = Command(name)
    except ValueError:
        raise UnknownCommand(f"unknown command {name!r}", 1) from None
    headers: Dict[str, str] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        key, sep, value = line.partition(":")
        if not sep or not _HEADER_NAME_RE.match(key):
            raise ProtocolSyntaxError(f"bad header line {line!r}", lineno)
        if key in headers:
            raise ProtocolSyntaxError(f"duplicate header '{key}'", lineno)
        headers[key] = value[1:] if value.startswith(" ") else value
    return command, headers


def _content_length(headers: Mapping[str, str], limit: int) -> int:
    raw = headers.get("content-length")
    if raw is None:
        raise MissingHeader("content-length")
    if not raw.isdigit():
        raise ProtocolSyntaxError(f"bad content-length {raw!r}")
    length = int(raw)
    if length > limit:
        raise FrameTooLarge(f"body of {length} bytes exceeds limit of {limit}")
    return length


def _make_frame(command: Command, headers: Dict[str, str], length: int, body: bytes) -> Frame:
    check_required(command, headers)
    headers["content-length"] = str(length)
    try:
        return Frame(command=command, headers=headers, body=body)
    except ValidationError as e:
        raise ProtocolSyntaxError(f"invalid frame: {e.errors()[0]['msg']}") from None


def decode_frame(stream: BinaryIO, max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES) -> Optional[Frame]:
    """Read exactly one frame from a binary stream.

    Returns None on a clean end of stream before the first byte of a frame.
    """
    lines: List[str] = []
    consumed = 0
    while True:
        raw = stream.readline(MAX_HEADER_LINE + 1)
        if not raw:
            if not lines:
                return None
            raise ProtocolSyntaxError("end of stream inside frame head", len(lines) + 1)
        consumed += len(raw)
        if consumed > max_frame_bytes:
            raise FrameTooLarge(f"frame head exceeds limit of {max_frame_bytes}")
        if not raw.endswith(b"\n"):
            if len(raw) > MAX_HEADER_LINE:
                raise FrameTooLarge("header line too long")
            raise ProtocolSyntaxError("end of stream inside frame head", len(lines) + 1)
        try:
            line = raw[:-1].decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolSyntaxError(f"invalid UTF-8 in frame head: {e}", len(lines) + 1) from e
        if line == "":
            if not lines:
                continue  # tolerate keep-alive blank lines between frames
            break
        lines.append(line)
    command, headers = _parse_head(lines)
    length = _content_length(headers, max_frame_bytes)
    body = stream.read(length) if length else b""
    if len(body) != length:
        raise LengthMismatch(f"expected {length} body bytes, got {len(body)}")
    return _make_frame(command, headers, length, body)


class FrameDecoder:
    """Incremental decoder over chunks of bytes (for non-stream transports)."""

    def __init__(self, max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES):
        self.max_frame_bytes = max_frame_bytes
        self._buffer = bytearray()

    def feed(self, data: bytes) -> List[Frame]:
        self._buffer.extend(data)
        frames = []
        while True:
            frame = self._next()
            if frame is None:
                return frames
            frames.append(frame)

    def _next(self) -> Optional[Frame]:
        while self._buffer.startswith(b"\n"):
            del self._buffer[0]
        end = self._buffer.find(b"\n\n")
        if end < 0:
            if len(self._buffer) > self.max_frame_bytes:
                raise FrameTooLarge(f"frame head exceeds limit of {self.max_frame_bytes}")
            return None
        try:
            head = self._buffer[:end].decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolSyntaxError(f"invalid UTF-8 in frame head: {e}") from e
        command, headers = _parse_head(head.split("\n"))
        length = _content_length(headers, self.max_frame_bytes)
        start = end + 2
        if len(self._buffer) < start + length:
            return None
        body = bytes(self._buffer[start:start + length])
        del self._buffer[:start + length]
        return _make_frame(command, headers, length, body)

    @property
    def pending_bytes(self) -> int:
        return len(self._buffer)
