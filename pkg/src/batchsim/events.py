"""Event records and JSONL serialisation shared by the node and cluster simulators."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, NamedTuple

from batchsim.errors import TraceParseError

ARRIVAL = "arrival"
ADMISSION_REJECT = "admission_reject"
BATCH_START = "batch_start"
BATCH_END = "batch_end"
TOKEN_EMIT = "token_emit"
REQUEST_DONE = "request_done"

KINDS = (ARRIVAL, ADMISSION_REJECT, BATCH_START, BATCH_END, TOKEN_EMIT, REQUEST_DONE)


class Event(NamedTuple):
    t_us: int
    kind: str
    req_id: int | None
    data: dict | None = None

    @property
    def t_ms(self) -> float:
        return self.t_us / 1000

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"t_ms": self.t_us / 1000, "kind": self.kind, "req_id": self.req_id}
        if self.data:
            rec.update(self.data)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Event":
        rec = dict(rec)
        t_us = int(round(rec.pop("t_ms") * 1000))
        kind = rec.pop("kind")
        req_id = rec.pop("req_id", None)
        return cls(t_us, kind, req_id, rec or None)


class EventLog:
    def __init__(self, events: Iterable[Event] = (), complete: bool = True, node_id: int = 0):
        self.events: list[Event] = list(events)
        self.complete = complete
        self.node_id = node_id

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, i):
        return self.events[i]

    def append(self, ev: Event) -> None:
        self.events.append(ev)

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]

    def dumps(self) -> str:
        return "".join(json.dumps(e.to_record(), separators=(",", ":")) + "\n" for e in self.events)

    def write_jsonl(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def read_jsonl(cls, path, node_id: int = 0) -> "EventLog":
        events = []
        with Path(path).open() as fh:
            for no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    events.append(Event.from_record(json.loads(line)))
                except (ValueError, KeyError, TypeError) as e:
                    raise TraceParseError(path, no, f"bad event record: {e}") from None
        return cls(events, node_id=node_id)
