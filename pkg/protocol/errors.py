"""Exception types shared by every package.

Each error carries the wire ``code`` used in the ``error-code`` header of ERROR
frames, so a refusal raised inside the broker can be re-raised unchanged on
the client side (see :func:`from_code`).
"""

from typing import Dict, List, Optional, Type


class AcwpError(Exception):
    """Base class for all middleware errors."""

    code = "protocol-error"

    def __init__(self, message: str = "", ref: Optional[str] = None):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.ref = ref


# --- protocol -------------------------------------------------------------

class ProtocolSyntaxError(AcwpError):
    """Malformed document, frame, schema or rule text."""

    def __init__(self, message: str, line: Optional[int] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


class DuplicatePath(ProtocolSyntaxError):
    pass


class UnknownCommand(ProtocolSyntaxError):
    pass


class LengthMismatch(AcwpError):
    pass


class FrameTooLarge(AcwpError):
    pass


class MissingHeader(AcwpError):
    def __init__(self, name: str):
        super().__init__(f"missing header '{name}'")
        self.name = name


class DuplicateSchema(ProtocolSyntaxError):
    pass


class DuplicateFieldPath(ProtocolSyntaxError):
    pass


# --- broker ---------------------------------------------------------------

class UnknownTopic(AcwpError):
    code = "unknown-topic"


class OwnershipViolation(AcwpError):
    code = "ownership-violation"


class SchemaViolation(AcwpError):
    """Document failed validation; ``violations`` holds one entry per problem."""

    code = "schema-violation"

    def __init__(self, violations: List, ref: Optional[str] = None):
        self.violations = list(violations)
        lines = [str(v) for v in self.violations]
        super().__init__("; ".join(lines) or "schema violation", ref=ref)


class UnknownMessageType(AcwpError):
    code = "unknown-message-type"


class DuplicateSubscription(AcwpError):
    code = "duplicate-subscription"


class UnknownSubscription(AcwpError):
    code = "unknown-subscription"


class AlreadyDeclared(AcwpError):
    code = "already-declared"


class ReservedSuffix(AcwpError):
    code = "reserved-suffix"


class UnknownDomain(AcwpError):
    code = "unknown-domain"


class AlreadyOwned(AcwpError):
    code = "already-owned"


class UnknownPending(AcwpError):
    code = "unknown-pending"


class DuplicateClientId(AcwpError):
    code = "duplicate-client-id"


# --- federation / sdk / sim -------------------------------------------------

class LocalScopeRule(ProtocolSyntaxError):
    pass


class DuplicateBrokerId(AcwpError):
    code = "duplicate-broker-id"


class ConnectionRefused(AcwpError):
    code = "connection-refused"


class NotConnected(AcwpError):
    code = "not-connected"


class RequestTimeout(AcwpError):
    code = "timeout"


class ConfigError(AcwpError):
    code = "config-error"

    def __init__(self, message: str, location: Optional[str] = None):
        where = f"{location}: " if location else ""
        super().__init__(f"{where}{message}")
        self.location = location


class BadLegacyLine(AcwpError):
    code = "bad-legacy-line"


class ScenarioError(ProtocolSyntaxError):
    pass


_BY_CODE: Dict[str, Type[AcwpError]] = {
    cls.code: cls
    for cls in (
        UnknownTopic,
        OwnershipViolation,
        UnknownMessageType,
        DuplicateSubscription,
        UnknownSubscription,
        AlreadyDeclared,
        ReservedSuffix,
        UnknownDomain,
        AlreadyOwned,
        UnknownPending,
        DuplicateClientId,
    )
}


def from_code(code: str, message: str = "", ref: Optional[str] = None) -> AcwpError:
    """Rebuild the exception for an ERROR frame's ``error-code``."""
    if code == SchemaViolation.code:
        lines = [part for part in message.split("; ") if part.strip()]
        return SchemaViolation(lines, ref=ref)
    cls = _BY_CODE.get(code, AcwpError)
    err = cls(message or code, ref=ref)
    if cls is AcwpError:
        err.code = code
    return err
