"""Scenario scripts: timed actions for a simulation run.

One action per line::

    # cwp1 files and clears a flight plan
    at 0   cwp1 contribute fpl fpl.create callsign="DLH123" aircraft_type="A320" adep="EDDF" ades="EDDH" eobt=540
    at 200 cwp1 contribute fpl fpl.update callsign="DLH123" status="cleared"
    at 300 cwp2 withhold_ack
    at 400 ifagent legacy "BAW12  B744EGLLEDDF0600"

Arguments of the form ``key=value`` use the document value grammar; a bare
unquoted value that is not a number, boolean or null is taken as text.
"""

import random
import shlex
from pathlib import Path
from typing import Dict, List, Tuple

from pydantic import BaseModel, Field

from protocol import Document, encode_value, parse_value
from protocol.document import is_valid_path
from protocol.errors import ProtocolSyntaxError, ScenarioError

from .flight_plans import CREATE, DELETE, UPDATE

# action -> (min args, max args or None)
ACTIONS: Dict[str, Tuple[int, int]] = {
    "contribute": (2, None),
    "publish": (2, None),
    "subscribe": (1, 1),
    "withhold_ack": (0, 1),
    "disconnect": (0, 0),
    "attach_broker": (1, 1),
    "detach_broker": (1, 1),
    "partition": (0, 0),
    "heal": (0, 0),
    "select": (1, 2),
    "legacy": (1, 1),
    "request": (2, None),
}


class ScenarioAction(BaseModel):
    at_ms: int = Field(ge=0)
    actor: str
    action: str
    args: List[str] = Field(default_factory=list)
    line: int = 0

    def to_line(self) -> str:
        return " ".join(["at", str(self.at_ms), self.actor, self.action, *self.args])


class ScenarioScript(BaseModel):
    actions: List[ScenarioAction] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    def to_text(self) -> str:
        return "".join(a.to_line() + "\n" for a in self.actions)


def _split(text: str, lineno: int) -> List[str]:
    lexer = shlex.shlex(text, posix=False)
    lexer.whitespace_split = True
    lexer.commenters = ""
    try:
        return list(lexer)
    except ValueError as e:
        raise ScenarioError(str(e), lineno) from None


def parse_scenario(text: str) -> ScenarioScript:
    actions: List[ScenarioAction] = []
    last = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = _split(line, lineno)
        if len(tokens) < 4 or tokens[0] != "at":
            raise ScenarioError("expected 'at <ms> <actor> <action> [args...]'", lineno)
        if not tokens[1].isdigit():
            raise ScenarioError(f"bad time {tokens[1]!r}", lineno)
        at_ms = int(tokens[1])
        if at_ms < last:
            raise ScenarioError(f"time {at_ms} goes backwards (previous {last})", lineno)
        last = at_ms
        actor, action, args = tokens[2], tokens[3], tokens[4:]
        arity = ACTIONS.get(action)
        if arity is None:
            raise ScenarioError(f"unknown action {action!r}", lineno)
        low, high = arity
        if len(args) < low or (high is not None and len(args) > high):
            raise ScenarioError(f"{action}: wrong number of arguments", lineno)
        actions.append(ScenarioAction(at_ms=at_ms, actor=actor, action=action, args=args, line=lineno))
    return ScenarioScript(actions=actions)


def load_scenario(path: Path) -> ScenarioScript:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e.strerror}") from e
    return parse_scenario(text)


def parse_arguments(args: List[str], line: int = 0) -> Document:
    """``key=value`` tokens -> document."""
    entries = []
    for token in args:
        key, sep, raw = token.partition("=")
        if not sep or not is_valid_path(key):
            raise ScenarioError(f"expected key=value, got {token!r}", line)
        try:
            value = parse_value(raw, line)
        except ProtocolSyntaxError:
            if raw.startswith('"'):
                raise ScenarioError(f"bad quoted value in {token!r}", line) from None
            value = raw
        entries.append((key, value))
    try:
        return Document(entries)
    except ProtocolSyntaxError as e:
        raise ScenarioError(e.message, line) from None


def unquote(token: str, line: int = 0) -> str:
    try:
        value = parse_value(token, line)
    except ProtocolSyntaxError:
        return token
    return value if isinstance(value, str) else token


# --- random scenarios --------------------------------------------------------------------

AERODROMES = ("EDDF", "EDDH", "EDDM", "EDDB", "EGLL", "LFPG", "LOWW", "LSZH")
AIRCRAFT = ("A320", "A321", "B738", "B744", "E190", "CRJ9")
STATUSES = ("filed", "cleared", "taxiing", "departed")


def _args(entries: Dict[str, object]) -> List[str]:
    return [f"{k}={encode_value(v)}" for k, v in entries.items()]


def random_scenario(seed: int, cwps: int, contributions: int, callsigns: int = 6,
                    spacing_ms: int = 20) -> ScenarioScript:
    """Interleaved create/update/delete contributions from random CWPs.

    The callsign pool is small so contributions collide; some updates and
    deletes hit unknown callsigns and are rejected by the owner.
    """
    rng = random.Random(seed)
    pool = [f"T{seed % 1000:03d}{i}" for i in range(callsigns)]
    actions: List[ScenarioAction] = []
    at_ms = 0
    for _ in range(contributions):
        at_ms += rng.randint(0, spacing_ms)
        actor = f"cwp{rng.randint(1, cwps)}"
        callsign = rng.choice(pool)
        roll = rng.random()
        if roll < 0.4:
            kind = CREATE
            entries = {"callsign": callsign, "aircraft_type": rng.choice(AIRCRAFT),
                       "adep": rng.choice(AERODROMES), "ades": rng.choice(AERODROMES),
                       "eobt": rng.randint(0, 1439)}
        elif roll < 0.85:
            kind = UPDATE
            entries = {"callsign": callsign}
            for name in rng.sample(["status", "runway", "eobt", "squawk"], rng.randint(1, 2)):
                if name == "status":
                    entries[name] = rng.choice(STATUSES)
                elif name == "runway":
                    entries[name] = rng.choice(("07L", "25R", "18", "26"))
                elif name == "eobt":
                    entries[name] = rng.randint(0, 1439)
                else:
                    entries[name] = "".join(rng.choice("01234567") for _ in range(4))
        else:
            kind = DELETE
            entries = {"callsign": callsign}
        actions.append(ScenarioAction(at_ms=at_ms, actor=actor, action="contribute",
                                      args=["fpl", kind, *_args(entries)]))
    return ScenarioScript(actions=actions)
