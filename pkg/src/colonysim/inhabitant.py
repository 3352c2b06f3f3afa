"""The autonomous agent: message routing, request execution, monitoring
and rule-driven decisions.

An inhabitant is an isolated state machine. It shares nothing; the event
loop feeds it messages and ticks, and it answers with outbound messages
and dispatch descriptors the environment acts on. Node capacity is the
environment's concern: the runtime only keeps its FIFO and reports what
the head of the queue needs.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

from . import knowledge as kn
from .knowledge import KnowledgeRecord, KnowledgeStore, StructuralSnapshot
from .messages import COLONY, ENVIRONMENT, NEIGHBORS, USER, Message, MessageKind, SignalKind
from .protocol import ProposalDraft, ProposalKind, Scope
from .rules import PROPOSAL_ACTIONS, Rule, RuleSet, SIGNAL_ACTION, nearest_rank
from .topology import FunctionSpec, LifecycleState, Topology

#: route_message returns (tag, ...) dispatch descriptors:
#:   ("enqueue", msg)            accepted function request, try admission
#:   ("held", msg)               buffered during an executing change
#:   ("negative", msg, cause)    reply with a negative function response
#:   ("ingested", record, ok)    behavioral data offered to the knowledge store
#:   ("response", corr_id)       a pending outgoing call was answered
#:   ("protocol", msg)           adaptation traffic for the protocol layer
#:   ("audit", reason, msg)      routed to nowhere; recorded, never raised
Dispatch = tuple


@dataclass
class QueuedRequest:
    msg: Message
    enqueued_at: float


@dataclass
class EvalContext:
    """Snapshot of the world the decision sub-module may consult."""

    topology: Topology
    nodes: Mapping[str, float]
    demand: Mapping[str, float]
    free_capacity: float
    own_live_proposal: bool


class InhabitantRuntime:
    def __init__(self, iid: int, functions: set[str], node: str,
                 rules: RuleSet | None = None, *,
                 service_rng: random.Random | None = None,
                 service_time_mode: str = "exponential",
                 spawned_from: int | None = None) -> None:
        self.id = iid
        self.node = node
        self.functions = set(functions)
        self.state = LifecycleState.ACTIVE
        self.queue: deque[QueuedRequest] = deque()
        self.in_service: dict[str, float] = {}  # corr -> occupied demand
        self.holding = False
        self.held: list[Message] = []
        self.knowledge = KnowledgeStore()
        self.rules = rules if rules is not None else RuleSet()
        self.links: dict[int, float] = {}  # local neighbor table
        self.replica_group: str | None = None
        self.spawned_from = spawned_from
        self.outstanding: dict[str, tuple[str, float]] = {}  # corr -> (fn, sent_at)
        self.approval_locks: dict[int, float] = {}  # proposal id -> deadline
        self._rng = service_rng or random.Random(0)
        self._mode = service_time_mode

    # -- communication sub-module ---------------------------------------

    def route_message(self, msg: Message, now: float) -> list[Dispatch]:
        """Total function: anything unroutable becomes an audit record."""
        try:
            return self._route(msg, now)
        except Exception as exc:  # malformed payloads must never crash the colony
            return [("audit", f"malformed:{type(exc).__name__}", msg)]

    def _route(self, msg: Message, now: float) -> list[Dispatch]:
        kind = msg.kind
        if kind is MessageKind.FUNCTION_REQUEST:
            return self._route_request(msg, now)
        if kind is MessageKind.FUNCTION_RESPONSE:
            if msg.correlation_id in self.outstanding:
                fn, sent_at = self.outstanding.pop(msg.correlation_id)
                record = KnowledgeRecord(
                    origin=msg.sender, observed_at=now,
                    category=kn.CATEGORY_FUNCTIONAL, metric="round_trip",
                    value=now - sent_at, function=fn)
                return [("response", msg.correlation_id),
                        ("ingested", record, self.ingest_knowledge(record, now))]
            return [("audit", "unmatched-response", msg)]
        if kind is MessageKind.BEHAVIORAL:
            record = KnowledgeRecord(
                origin=msg.sender, observed_at=now,
                category=kn.CATEGORY_BEHAVIORAL,
                metric=msg.payload["signal"], value=float(msg.payload["value"]))
            return [("ingested", record, self.ingest_knowledge(record, now))]
        if kind is MessageKind.ANALYTICAL or kind in (
                MessageKind.ADAPT_REQUEST, MessageKind.ADAPT_APPROVE,
                MessageKind.ADAPT_REJECT, MessageKind.ADAPT_START_CONFIRM,
                MessageKind.ADAPT_COMPLETE):
            return [("protocol", msg)]
        return [("audit", "unknown-kind", msg)]

    def _route_request(self, msg: Message, now: float) -> list[Dispatch]:
        if self.state is LifecycleState.RETIRED:
            return [("negative", msg, "retired-inhabitant")]
        if self.holding:
            self.held.append(msg)
            return [("held", msg)]
        fn = msg.payload["function"]
        if fn not in self.functions:
            return [("negative", msg, "function-not-hosted"),
                    ("audit", "function-not-hosted", msg)]
        self.queue.append(QueuedRequest(msg, now))
        return [("enqueue", msg)]

    def note_outgoing_call(self, corr: str, function: str, now: float) -> None:
        self.outstanding[corr] = (function, now)
        record = KnowledgeRecord(origin=self.id, observed_at=now,
                                 category=kn.CATEGORY_FUNCTIONAL,
                                 metric="calls_out", value=1.0, function=function)
        self.ingest_knowledge(record, now)

    # -- system functionality sub-module ---------------------------------

    def head_demand(self, specs: Mapping[str, FunctionSpec]) -> float | None:
        if not self.queue:
            return None
        return specs[self.queue[0].msg.payload["function"]].resource_demand

    def start_next(self, specs: Mapping[str, FunctionSpec], now: float) -> tuple[QueuedRequest, float, float]:
        """Pop the queue head into service. Returns (request, service_time, demand)."""
        item = self.queue.popleft()
        fn = item.msg.payload["function"]
        spec = specs[fn]
        wait = now - item.enqueued_at
        for metric, value in (("queue_wait", wait), ("bytes_in", spec.request_bytes)):
            self.ingest_knowledge(KnowledgeRecord(
                origin=item.msg.sender, observed_at=now,
                category=kn.CATEGORY_FUNCTIONAL, metric=metric,
                value=value, function=fn), now)
        service_time = self.sample_service_time(spec)
        self.in_service[item.msg.correlation_id] = spec.resource_demand
        return item, service_time, spec.resource_demand

    def sample_service_time(self, spec: FunctionSpec) -> float:
        if self._mode == "constant":
            return spec.mean_service_time_ms
        return self._rng.expovariate(1.0 / spec.mean_service_time_ms)

    def finish_service(self, req: QueuedRequest, service_time: float,
                       now: float) -> Message:
        corr = req.msg.correlation_id
        demand = self.in_service.pop(corr)
        fn = req.msg.payload["function"]
        self.ingest_knowledge(KnowledgeRecord(
            origin=req.msg.sender, observed_at=now,
            category=kn.CATEGORY_FUNCTIONAL, metric="service_time",
            value=service_time, function=fn), now)
        return Message(
            kind=MessageKind.FUNCTION_RESPONSE, sender=self.id,
            recipients=(req.msg.sender,) if isinstance(req.msg.sender, int) else req.msg.sender,
            correlation_id=corr,
            payload={"function": fn, "ok": True, "demand": demand}, sent_at=now)

    def negative_response(self, msg: Message, cause: str, now: float) -> Message:
        return Message(
            kind=MessageKind.FUNCTION_RESPONSE, sender=self.id,
            recipients=(msg.sender,) if isinstance(msg.sender, int) else msg.sender,
            correlation_id=msg.correlation_id,
            payload={"function": msg.payload.get("function"), "ok": False,
                     "cause": cause}, sent_at=now)

    def drained(self) -> bool:
        return not self.queue and not self.in_service

    def freeze(self) -> None:
        self.state = LifecycleState.ADAPTING
        self.holding = True

    def unfreeze(self) -> list[Message]:
        """Back to Active; returns the requests buffered while frozen."""
        self.state = LifecycleState.ACTIVE
        self.holding = False
        held, self.held = self.held, []
        return held

    # -- knowledge sub-module ---------------------------------------------

    def ingest_knowledge(self, record: KnowledgeRecord, now: float) -> bool:
        return self.knowledge.ingest(
            record, subscribed=self.rules.subscribed_categories(),
            max_window=self.rules.max_window(), now=now)

    def ingest_structure(self, snapshot: StructuralSnapshot) -> None:
        self.knowledge.ingest_structure(snapshot)

    # -- decision sub-module ------------------------------------------------

    def vote_on(self, payload: dict, now: float, *, own_pid: int | None,
                own_yieldable: bool) -> tuple[bool, str, bool]:
        """Validate a peer's adaptation request against local knowledge.

        Returns (approve, reason, yield_own). yield_own asks the
        environment to abort this inhabitant's own pending proposal in
        favor of the (older) incoming one: without that tie-break,
        symmetric proposals would reject each other forever.
        """
        if self.state is not LifecycleState.ACTIVE:
            return False, "frozen", False
        pid = payload["proposal_id"]
        yield_own = False
        if own_pid is not None:
            if own_yieldable and pid < own_pid:
                yield_own = True
            else:
                return False, "busy", False
        self._purge_locks(now)
        if any(lock_pid != pid for lock_pid in self.approval_locks):
            return False, "locked", False
        if payload["kind"] == ProposalKind.REMOVE_LINK.value and \
                payload["params"].get("peer") == self.id:
            reason = self._sole_route_objection(payload["initiator"], now)
            if reason:
                return False, reason, False
        self.approval_locks[pid] = payload["deadline"]
        return True, "ok", yield_own

    def release_lock(self, pid: int) -> None:
        self.approval_locks.pop(pid, None)

    def _purge_locks(self, now: float) -> None:
        self.approval_locks = {p: d for p, d in self.approval_locks.items()
                               if d > now}

    def _sole_route_objection(self, peer: int, now: float) -> str | None:
        """Reject losing a link that is my only path to a function I call."""
        struct = self.knowledge.structural
        if struct is None:
            return None
        window = self.rules.max_window()
        peer_fns = set(struct.inhabitants.get(peer, {}).get("functions", ()))
        for fn in sorted(self.knowledge.calls_out(window, now)):
            if fn not in peer_fns:
                continue
            alternates = [n for n in self.links
                          if n != peer and fn in set(
                              struct.inhabitants.get(n, {}).get("functions", ()))]
            if not alternates:
                return "sole-route"
        return None

    def evaluate_rules(self, now: float, ctx: EvalContext) -> tuple[list[Message], ProposalDraft | None]:
        """Fire eligible rules in ascending id order.

        Behavioral signals are emitted even while Adapting; at most one
        proposal comes out of a tick, the lowest-id eligible rule wins.
        """
        if self.state is LifecycleState.RETIRED:
            return [], None
        proposals_allowed = (self.state is LifecycleState.ACTIVE
                             and not ctx.own_live_proposal)
        signals: list[Message] = []
        draft: ProposalDraft | None = None
        self.knowledge.evict(now=now, max_window=self.rules.max_window())
        for rule in self.rules.ordered():
            if not self.rules.cooled_down(rule, now):
                continue
            if not rule.condition_holds(self.knowledge, now):
                continue
            if rule.action == SIGNAL_ACTION:
                signals.append(self._signal_message(rule, now, ctx))
                self.rules.mark_fired(rule, now)
            elif rule.action in PROPOSAL_ACTIONS and proposals_allowed and draft is None:
                candidate = self._resolve_proposal(rule, now, ctx)
                if candidate is not None:
                    draft = candidate
                    self.rules.mark_fired(rule, now)
        return signals, draft

    def _signal_message(self, rule: Rule, now: float, ctx: EvalContext) -> Message:
        signal = SignalKind(rule.params.get("signal", "response_delay"))
        if signal is SignalKind.SPARE_CAPACITY:
            value = max(0.0, ctx.free_capacity)
        elif signal is SignalKind.RESPONSE_DELAY:
            waits = self.knowledge.samples("queue_wait", rule.window_ms, now)
            value = nearest_rank(waits, 95.0) if waits else 0.0
        else:  # data volume
            value = sum(self.knowledge.samples("bytes_in", rule.window_ms, now))
        return Message(
            kind=MessageKind.BEHAVIORAL, sender=self.id, recipients=NEIGHBORS,
            correlation_id=f"sig-{self.id}-{rule.rule_id}-{now!r}",
            payload={"signal": signal.value, "value": value,
                     "window": rule.window_ms}, sent_at=now)

    def _resolve_proposal(self, rule: Rule, now: float, ctx: EvalContext) -> ProposalDraft | None:
        """Turn a rule action into a concrete draft; None when infeasible."""
        params = dict(rule.params)
        scope = Scope(params.pop("scope", "peers"))
        group = frozenset(params.pop("group", ())) or None
        kind = ProposalKind(rule.action)

        if kind is ProposalKind.SPLIT:
            if len(self.functions) < 2:
                return None
            move = self._split_selection(params, rule, now)
            if not move or move >= self.functions:
                return None
            params = {"move": sorted(move)}
        elif kind is ProposalKind.MERGE:
            partner = self._merge_partner(params, ctx)
            if partner is None:
                return None
            params = {"partner": partner,
                      "direction": params.get("direction", "initiator-into-partner")}
        elif kind is ProposalKind.REPLICATE:
            node = params.get("node", "same")
            node = self.node if node == "same" else node
            if node not in ctx.nodes:
                return None
            params = {"node": node}
        elif kind is ProposalKind.ADD_LINK:
            peer = params.get("peer")
            if not isinstance(peer, int) or peer == self.id:
                return None
            if not ctx.topology.live(peer) or ctx.topology.has_link(self.id, peer):
                return None
            params = {"peer": peer, "latency": float(params.get("latency", 1.0))}
        elif kind is ProposalKind.REMOVE_LINK:
            peer = params.get("peer")
            if not isinstance(peer, int) or not ctx.topology.has_link(self.id, peer):
                return None
            params = {"peer": peer}
        return ProposalDraft(kind=kind, params=params, scope=scope, group=group)

    def _split_selection(self, params: dict, rule: Rule, now: float) -> set[str]:
        explicit = params.get("functions")
        if explicit:
            return set(explicit) & self.functions
        # hottest function: worst p95 queue wait inside the rule window,
        # ties broken by sample count then name
        candidates: list[tuple[float, int, str]] = []
        for fn in self.knowledge.functions_seen("queue_wait", rule.window_ms, now):
            if fn not in self.functions:
                continue
            waits = self.knowledge.samples("queue_wait", rule.window_ms, now, function=fn)
            candidates.append((nearest_rank(waits, 95.0), len(waits), fn))
        if not candidates:
            return set()
        top_p95, top_count, _ = max(candidates, key=lambda c: (c[0], c[1]))
        names = sorted(fn for p, c, fn in candidates
                       if p == top_p95 and c == top_count)
        return {names[0]}

    def _merge_partner(self, params: dict, ctx: EvalContext) -> int | None:
        partner = params.get("partner", "replica")
        if partner == "replica":
            rec = ctx.topology.inhabitants.get(self.id)
            gid = rec.replica_group if rec else None
            if gid is None:
                return None
            members = [i for i in ctx.topology.replica_groups().get(gid, [])
                       if i != self.id]
            return members[0] if members else None
        if partner == "origin":
            origin = self.spawned_from
            if origin is not None and ctx.topology.live(origin):
                return origin
            return None
        if isinstance(partner, int) and ctx.topology.live(partner) and partner != self.id:
            return partner
        return None

    def update_rules(self, op: str, rule: Rule | None = None,
                     rule_id: int | None = None) -> None:
        if op == "add":
            self.rules.add(rule)
        elif op == "modify":
            self.rules.modify(rule)
        elif op == "delete":
            self.rules.delete(rule_id if rule_id is not None else rule.rule_id)
        else:
            raise ValueError(f"unknown rule delta op {op!r}")
