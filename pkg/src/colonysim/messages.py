"""Message taxonomy: the only medium through which inhabitants interact."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

#: Address of the simulated environment (delivery fabric, registry, nodes).
ENVIRONMENT = "env"
#: Address of external users feeding workload into the colony.
USER = "user"

#: Broadcast recipient groups resolved by the environment at delivery time.
NEIGHBORS = "neighbors"
COLONY = "colony"


class MessageKind(str, Enum):
    FUNCTION_REQUEST = "function-request"
    FUNCTION_RESPONSE = "function-response"
    BEHAVIORAL = "behavioral"
    ANALYTICAL = "analytical"
    ADAPT_REQUEST = "adapt-request"
    ADAPT_APPROVE = "adapt-approve"
    ADAPT_REJECT = "adapt-reject"
    ADAPT_START_CONFIRM = "adapt-start-confirm"
    ADAPT_COMPLETE = "adapt-complete"


class SignalKind(str, Enum):
    """Behavioral signal vocabulary; values double as knowledge metric names."""

    SPARE_CAPACITY = "spare_capacity"
    RESPONSE_DELAY = "response_delay"
    DATA_VOLUME = "data_volume"


Address = "int | str"  # inhabitant id, ENVIRONMENT, or USER


@dataclass
class Message:
    kind: MessageKind
    sender: int | str
    recipients: tuple[int, ...] | str  # explicit ids, NEIGHBORS, COLONY, ENVIRONMENT or USER
    correlation_id: str
    payload: dict = field(default_factory=dict)
    sent_at: float = 0.0

    def summary(self) -> dict:
        """Stable, trace-friendly rendering (payload kept shallow)."""
        rec = self.recipients
        if isinstance(rec, tuple):
            rec = list(rec)
        return {
            "kind": self.kind.value,
            "from": self.sender,
            "to": rec,
            "corr": self.correlation_id,
            "payload": self.payload,
        }
