"""Per-inhabitant monitoring store with relevance filtering.

Records carry their origin so decisions can be traced back to the data
source. The store only accepts records whose category some active rule
actually consumes, and forgets anything older than the longest rule
window, so its size stays bounded by sampling rate times window length.
"""

from __future__ import annotations

from dataclasses import dataclass

CATEGORY_FUNCTIONAL = "functional"
CATEGORY_BEHAVIORAL = "behavioral"
CATEGORY_ANALYTICAL = "analytical"
CATEGORY_STRUCTURAL = "structural"

#: Which category each metric belongs to. Rules subscribe categories by
#: referencing these metric names in their conditions.
METRIC_CATEGORY = {
    "queue_wait": CATEGORY_FUNCTIONAL,
    "service_time": CATEGORY_FUNCTIONAL,
    "calls_out": CATEGORY_FUNCTIONAL,
    "round_trip": CATEGORY_FUNCTIONAL,
    "spare_capacity": CATEGORY_BEHAVIORAL,
    "response_delay": CATEGORY_BEHAVIORAL,
    "data_volume": CATEGORY_BEHAVIORAL,
}


@dataclass(frozen=True)
class KnowledgeRecord:
    origin: int | str
    observed_at: float
    category: str
    metric: str
    value: float
    function: str | None = None


@dataclass(frozen=True)
class StructuralSnapshot:
    """Latest known colony structure (inhabitant configurations and links)."""

    observed_at: float
    origin: int | str
    inhabitants: dict  # id -> {"functions": [...], "node": str}
    links: dict        # (a, b) sorted tuple -> latency


class KnowledgeStore:
    def __init__(self) -> None:
        self._records: list[KnowledgeRecord] = []
        self.structural: StructuralSnapshot | None = None

    def __len__(self) -> int:
        return len(self._records)

    def ingest(self, record: KnowledgeRecord, *, subscribed: set[str],
               max_window: float, now: float) -> bool:
        """Store the record iff it passes the relevance filter.

        Structural updates are always relevant (they feed change
        validation); metric samples must belong to a subscribed category
        and fall inside the longest active rule window.
        """
        if record.category == CATEGORY_STRUCTURAL:
            raise ValueError("structural updates go through ingest_structure")
        self.evict(now=now, max_window=max_window)
        if record.category not in subscribed:
            return False
        if record.observed_at <= now - max_window:
            return False
        self._records.append(record)
        return True

    def ingest_structure(self, snapshot: StructuralSnapshot) -> None:
        self.structural = snapshot

    def evict(self, *, now: float, max_window: float) -> None:
        cutoff = now - max_window
        if self._records and self._records[0].observed_at <= cutoff:
            self._records = [r for r in self._records if r.observed_at > cutoff]

    def samples(self, metric: str, window: float, now: float,
                function: str | None = None) -> list[float]:
        cutoff = now - window
        return [r.value for r in self._records
                if r.metric == metric and r.observed_at > cutoff
                and (function is None or r.function == function)]

    def functions_seen(self, metric: str, window: float, now: float) -> list[str]:
        cutoff = now - window
        return sorted({r.function for r in self._records
                       if r.metric == metric and r.observed_at > cutoff
                       and r.function is not None})

    def origins_calling(self, functions: set[str], window: float, now: float) -> set[int]:
        """Neighbors whose recorded incoming requests hit one of ``functions``."""
        cutoff = now - window
        return {r.origin for r in self._records
                if r.metric == "queue_wait" and r.observed_at > cutoff
                and r.function in functions and isinstance(r.origin, int)}

    def calls_out(self, window: float, now: float) -> set[str]:
        """Function names this inhabitant requested from peers recently."""
        cutoff = now - window
        return {r.function for r in self._records
                if r.metric == "calls_out" and r.observed_at > cutoff
                and r.function is not None}
