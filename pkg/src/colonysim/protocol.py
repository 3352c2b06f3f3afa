"""Adaptation proposals: confirmation scopes, affected sets, validation.

A proposal is a state machine advanced only by message deliveries:
Proposed -> AwaitingApprovals -> Executing -> Completed, with Aborted
reachable from the first two states. Authoritative proposals skip the
approval stage. The event loop owns the live registry; this module holds
the proposal data and the pure decision helpers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from . import topology as topo
from .topology import Topology


class ProposalKind(str, Enum):
    SPLIT = "split"
    MERGE = "merge"
    REPLICATE = "replicate"
    ADD_LINK = "add-link"
    REMOVE_LINK = "remove-link"


class Scope(str, Enum):
    AUTHORITATIVE = "authoritative"
    PEERS = "peers"
    GROUP = "group"
    COLONY = "colony"


class ProposalState(str, Enum):
    PROPOSED = "proposed"
    AWAITING = "awaiting-approvals"
    EXECUTING = "executing"
    COMPLETED = "completed"
    ABORTED = "aborted"


_LEGAL = {
    ProposalState.PROPOSED: {ProposalState.AWAITING, ProposalState.EXECUTING,
                             ProposalState.ABORTED},
    ProposalState.AWAITING: {ProposalState.EXECUTING, ProposalState.ABORTED},
    ProposalState.EXECUTING: {ProposalState.COMPLETED},
    ProposalState.COMPLETED: set(),
    ProposalState.ABORTED: set(),
}


@dataclass
class ProposalDraft:
    """What a rule emits; the environment turns it into a registered proposal."""

    kind: ProposalKind
    params: dict
    scope: Scope = Scope.PEERS
    group: frozenset[int] | None = None


@dataclass
class AdaptationProposal:
    proposal_id: int
    initiator: int
    kind: ProposalKind
    params: dict
    scope: Scope
    created_at: float
    deadline: float
    group: frozenset[int] | None = None
    state: ProposalState = ProposalState.PROPOSED
    affected: frozenset[int] = frozenset()
    approvals: dict = field(default_factory=dict)  # responder -> (bool, reason)
    env_approved: bool | None = None
    abort_reason: str | None = None
    # ids of parties that must drain their queues before the change applies
    draining: set[int] = field(default_factory=set)

    def transition(self, new_state: ProposalState) -> None:
        if new_state not in _LEGAL[self.state]:
            raise RuntimeError(
                f"proposal {self.proposal_id}: illegal {self.state.value} -> "
                f"{new_state.value}")
        self.state = new_state

    @property
    def terminal(self) -> bool:
        return self.state in (ProposalState.COMPLETED, ProposalState.ABORTED)

    def lock_set(self) -> frozenset[int]:
        """Everyone this change touches; used for the Executing-overlap gate."""
        return self.affected | {self.initiator}

    def request_payload(self) -> dict:
        return {
            "proposal_id": self.proposal_id,
            "kind": self.kind.value,
            "initiator": self.initiator,
            "params": dict(self.params),
            "deadline": self.deadline,
        }

    def votes_summary(self) -> dict:
        return {str(k): ("approve" if v[0] else f"reject:{v[1]}")
                for k, v in sorted(self.approvals.items(), key=lambda kv: str(kv[0]))}


def affected_set(topology: Topology, proposal: AdaptationProposal) -> frozenset[int]:
    """Who must be consulted / notified about the change.

    Colony scope widens to every live inhabitant; Group scope is the
    explicit set; otherwise the set follows the change kind.
    """
    init = proposal.initiator
    topology.require_live(init)
    if proposal.scope is Scope.COLONY:
        return frozenset(topology.live_ids()) - {init}
    if proposal.scope is Scope.GROUP:
        return frozenset(proposal.group or ()) - {init}

    kind = proposal.kind
    if kind in (ProposalKind.SPLIT, ProposalKind.REPLICATE):
        return frozenset(topology.neighbors(init))
    if kind is ProposalKind.MERGE:
        partner = proposal.params["partner"]
        topology.require_live(partner)
        joint = topology.neighbors(init) | topology.neighbors(partner) | {partner}
        return frozenset(joint) - {init}
    if kind in (ProposalKind.ADD_LINK, ProposalKind.REMOVE_LINK):
        return frozenset({proposal.params["peer"]})
    raise ValueError(f"unknown proposal kind {kind}")


def validate(topology: Topology, nodes: Mapping[str, float],
             proposal: AdaptationProposal) -> str | None:
    """Check the proposal against the authoritative colony before the
    protocol starts. Returns an abort reason, or None when admissible."""
    init = proposal.initiator
    if not topology.live(init):
        return "unknown-initiator"
    if topology.inhabitants[init].state is not topo.LifecycleState.ACTIVE:
        return "initiator-frozen"
    params = proposal.params
    kind = proposal.kind
    if kind is ProposalKind.SPLIT:
        hosted = topology.inhabitants[init].functions
        move = frozenset(params.get("move", ()))
        keep = hosted - move
        if not move or not keep:
            return "partition-empty-side"
        if not move <= hosted:
            return "partition-not-exhaustive"
    elif kind is ProposalKind.MERGE:
        partner = params.get("partner")
        if partner == init:
            return "self-merge"
        if not topology.live(partner):
            return "unknown-inhabitant"
    elif kind is ProposalKind.REPLICATE:
        node = params.get("node")
        if node not in nodes:
            return "unknown-node"
    elif kind is ProposalKind.ADD_LINK:
        peer = params.get("peer")
        if peer == init:
            return "self-link"
        if not topology.live(peer):
            return "unknown-inhabitant"
        if topology.has_link(init, peer):
            return "duplicate-link"
    elif kind is ProposalKind.REMOVE_LINK:
        peer = params.get("peer")
        if not topology.live(peer):
            return "unknown-inhabitant"
        if not topology.has_link(init, peer):
            return "unknown-link"
    return None


def merge_endpoints(proposal: AdaptationProposal) -> tuple[int, int]:
    """(source, target): who retires and who absorbs."""
    partner = proposal.params["partner"]
    if proposal.params.get("direction") == "partner-into-initiator":
        return partner, proposal.initiator
    return proposal.initiator, partner


def needs_environment_approval(proposal: AdaptationProposal) -> bool:
    """Merges always consult the environment; so does any colony-wide change."""
    return proposal.kind is ProposalKind.MERGE or proposal.scope is Scope.COLONY


def node_static_demand(topology: Topology, demand: Mapping[str, float],
                       node: str) -> float:
    total = 0.0
    for iid in topology.live_ids():
        rec = topology.inhabitants[iid]
        if rec.node == node:
            total += sum(demand[f] for f in rec.functions)
    return total


def capacity_admits(topology_after: Topology, demand: Mapping[str, float],
                    nodes: Mapping[str, float], node: str) -> bool:
    return node_static_demand(topology_after, demand, node) <= nodes[node]


def overlapping(a: AdaptationProposal, b: AdaptationProposal) -> bool:
    return bool(a.lock_set() & b.lock_set())
