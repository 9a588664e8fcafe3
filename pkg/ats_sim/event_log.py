"""Append-only log of everything observable in a simulation run."""

from collections import Counter
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, List, Optional

import pandas as pd

from broker.models import BrokerEvent

COLUMNS = ("time", "broker", "kind", "topic", "message_id", "client", "detail")


def _clean(text: str) -> str:
    return " ".join(text.split()) if ("\t" in text or "\n" in text) else text


@dataclass(frozen=True)
class LogRecord:
    time: int
    broker: str
    kind: str
    topic: str = ""
    message_id: str = ""
    client: str = ""
    detail: str = ""

    def to_line(self) -> str:
        return "\t".join([str(self.time), self.broker, self.kind, self.topic, self.message_id,
                          self.client, _clean(self.detail)])


class EventLog:
    """Totally ordered record list; ``to_text`` is the golden-file form."""

    def __init__(self):
        self.records: List[LogRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[LogRecord]:
        return iter(self.records)

    def record(self, time: int, broker: str, kind: str, topic: str = "", message_id: str = "",
               client: str = "", detail: str = "") -> LogRecord:
        entry = LogRecord(time, broker, kind, topic, message_id, client, detail)
        self.records.append(entry)
        return entry

    def record_event(self, time: int, event: BrokerEvent) -> LogRecord:
        return self.record(time, event.broker_id, event.kind, event.topic, event.message_id,
                           event.client, event.detail)

    def select(self, kind: Optional[str] = None, broker: Optional[str] = None, topic: Optional[str] = None,
               client: Optional[str] = None, message_id: Optional[str] = None) -> List[LogRecord]:
        return [
            r for r in self.records
            if (kind is None or r.kind == kind)
            and (broker is None or r.broker == broker)
            and (topic is None or r.topic == topic)
            and (client is None or r.client == client)
            and (message_id is None or r.message_id == message_id)
        ]

    def index_of(self, **criteria) -> int:
        """Position of the first record matching ``criteria``; -1 if none."""
        for i, r in enumerate(self.records):
            if all(getattr(r, k) == v for k, v in criteria.items()):
                return i
        return -1

    def counts(self) -> Dict[str, int]:
        return dict(sorted(Counter(r.kind for r in self.records).items()))

    def to_text(self) -> str:
        return "".join(r.to_line() + "\n" for r in self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=list(COLUMNS))

    def summary(self) -> pd.DataFrame:
        """Events per (broker, kind)."""
        df = self.to_frame()
        if df.empty:
            return pd.DataFrame(columns=["broker", "kind", "events"])
        return df.groupby(["broker", "kind"]).size().reset_index(name="events")
