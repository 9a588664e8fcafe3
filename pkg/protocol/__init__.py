"""Wire protocol: documents, frames, envelopes and message schemas."""

from .document import (
    Document,
    Value,
    ValueKind,
    canonicalize,
    document_from_nested,
    encode_document,
    encode_value,
    kind_of,
    parse_document,
    parse_value,
)
from .envelope import Envelope, envelope_to_document, envelope_to_frame, frame_to_envelope, is_topic_name, make_message_id
from .frames import Command, Frame, FrameDecoder, decode_frame, encode_frame
from .schema import (
    FieldRule,
    MessageSchema,
    SchemaSet,
    Violation,
    ViolationKind,
    load_schema_files,
    parse_schema_set,
    validate,
)

__all__ = [
    "Document",
    "Value",
    "ValueKind",
    "canonicalize",
    "document_from_nested",
    "encode_document",
    "encode_value",
    "kind_of",
    "parse_document",
    "parse_value",
    "Envelope",
    "envelope_to_document",
    "envelope_to_frame",
    "frame_to_envelope",
    "is_topic_name",
    "make_message_id",
    "Command",
    "Frame",
    "FrameDecoder",
    "decode_frame",
    "encode_frame",
    "FieldRule",
    "MessageSchema",
    "SchemaSet",
    "Violation",
    "ViolationKind",
    "load_schema_files",
    "parse_schema_set",
    "validate",
]
