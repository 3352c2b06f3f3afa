"""JSON-lines event trace: the run's complete, replayable record.

Each record is one canonically-serialized JSON object (sorted keys,
compact separators) so that traces are byte-stable and a digest over the
raw lines identifies a run exactly. Schema version is carried by every
record under "v".
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

SCHEMA_VERSION = 1


class MalformedTrace(Exception):
    pass


def canonical_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True)


class TraceWriter:
    def __init__(self) -> None:
        self._lines: list[str] = []
        self._records: list[dict] = []
        self._next_index = 0

    def emit(self, time: float, kind: str, actor, **fields) -> None:
        record = {"v": SCHEMA_VERSION, "i": self._next_index, "t": time,
                  "kind": kind, "actor": actor}
        for key, value in fields.items():
            record[key] = value
        self._next_index += 1
        self._records.append(record)
        self._lines.append(canonical_line(record))

    @property
    def records(self) -> list[dict]:
        return self._records

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self._lines:
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write(self, path: Path) -> None:
        path.write_text("\n".join(self._lines) + ("\n" if self._lines else ""))


def load(path) -> list[dict]:
    records = []
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedTrace(f"{path}:{lineno}: {exc}") from exc
        if not isinstance(record, dict) or "kind" not in record or "t" not in record:
            raise MalformedTrace(f"{path}:{lineno}: not a trace record")
        records.append(record)
    return records


def digest_of(records: list[dict]) -> str:
    h = hashlib.sha256()
    for record in records:
        h.update(canonical_line(record).encode())
        h.update(b"\n")
    return h.hexdigest()
