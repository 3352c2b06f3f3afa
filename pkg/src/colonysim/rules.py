"""Threshold rules over windowed knowledge aggregates.

A rule pairs a condition (aggregate of one metric over a sliding window
compared against a threshold) with an action: either broadcast a
behavioral signal or propose a structural change. Rule sets are mutable
at runtime through add/modify/delete deltas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .knowledge import METRIC_CATEGORY, KnowledgeStore

AGGREGATES = ("mean", "p95", "max", "count")
COMPARATORS = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
}

SIGNAL_ACTION = "signal"
PROPOSAL_ACTIONS = ("split", "merge", "replicate", "add-link", "remove-link")


class RuleError(Exception):
    pass


class UnknownRuleId(RuleError):
    pass


class DuplicateRuleId(RuleError):
    pass


def nearest_rank(values: list[float], pct: float) -> float:
    """Nearest-rank percentile; pct in (0, 100]. Input need not be sorted."""
    if not values:
        raise ValueError("percentile of empty sample")
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


def aggregate_samples(values: list[float], kind: str) -> float | None:
    """None means 'no data': conditions over missing data never hold."""
    if kind == "count":
        return float(len(values))
    if not values:
        return None
    if kind == "mean":
        return sum(values) / len(values)
    if kind == "max":
        return max(values)
    if kind == "p95":
        return nearest_rank(values, 95.0)
    raise ValueError(f"unknown aggregate {kind!r}")


@dataclass(frozen=True)
class Rule:
    rule_id: int
    metric: str
    aggregate: str
    comparator: str
    threshold: float
    window_ms: float
    action: str          # "signal" or one of PROPOSAL_ACTIONS
    params: dict = field(default_factory=dict)
    cooldown_ms: float = 0.0

    def __post_init__(self):
        if self.aggregate not in AGGREGATES:
            raise RuleError(f"rule {self.rule_id}: unknown aggregate {self.aggregate!r}")
        if self.comparator not in COMPARATORS:
            raise RuleError(f"rule {self.rule_id}: unknown comparator {self.comparator!r}")
        if self.metric not in METRIC_CATEGORY:
            raise RuleError(f"rule {self.rule_id}: unknown metric {self.metric!r}")
        if self.action != SIGNAL_ACTION and self.action not in PROPOSAL_ACTIONS:
            raise RuleError(f"rule {self.rule_id}: unknown action {self.action!r}")
        if self.cooldown_ms < 0 or self.window_ms <= 0:
            raise RuleError(f"rule {self.rule_id}: window must be > 0, cooldown >= 0")

    def condition_holds(self, store: KnowledgeStore, now: float) -> bool:
        samples = store.samples(self.metric, self.window_ms, now)
        value = aggregate_samples(samples, self.aggregate)
        if value is None:
            return False
        return COMPARATORS[self.comparator](value, self.threshold)


class RuleSet:
    """Ordered rule collection with cooldown bookkeeping."""

    def __init__(self, rules: list[Rule] = ()) -> None:
        self._rules: dict[int, Rule] = {}
        self._last_fired: dict[int, float] = {}
        for rule in rules:
            self.add(rule)

    def __len__(self) -> int:
        return len(self._rules)

    def __iter__(self):
        return iter(self.ordered())

    def ordered(self) -> list[Rule]:
        return [self._rules[i] for i in sorted(self._rules)]

    def get(self, rule_id: int) -> Rule | None:
        return self._rules.get(rule_id)

    def add(self, rule: Rule) -> None:
        if rule.rule_id in self._rules:
            raise DuplicateRuleId(f"rule id {rule.rule_id} already present")
        self._rules[rule.rule_id] = rule

    def modify(self, rule: Rule) -> None:
        if rule.rule_id not in self._rules:
            raise UnknownRuleId(f"rule id {rule.rule_id} not present")
        self._rules[rule.rule_id] = rule
        self._last_fired.pop(rule.rule_id, None)  # cooldown resets on change

    def delete(self, rule_id: int) -> None:
        if rule_id not in self._rules:
            raise UnknownRuleId(f"rule id {rule_id} not present")
        del self._rules[rule_id]
        self._last_fired.pop(rule_id, None)

    def clone_fresh(self) -> "RuleSet":
        """Same rules, cooldown state cleared (used for spawned inhabitants)."""
        return RuleSet(self.ordered())

    def cooled_down(self, rule: Rule, now: float) -> bool:
        last = self._last_fired.get(rule.rule_id)
        return last is None or now - last >= rule.cooldown_ms

    def mark_fired(self, rule: Rule, now: float) -> None:
        self._last_fired[rule.rule_id] = now

    def subscribed_categories(self) -> set[str]:
        return {METRIC_CATEGORY[r.metric] for r in self._rules.values()}

    def max_window(self) -> float:
        return max((r.window_ms for r in self._rules.values()), default=0.0)
