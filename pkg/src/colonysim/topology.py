"""Colony graph model and the pure structural transforms.

The topology is a value object: inhabitants (hosted function names, node
placement, lifecycle state, replica-group membership) plus undirected
links with per-link latency. Every transform returns a new topology and
never mutates its input, so the same inputs always produce the same
serialized output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from enum import Enum
from typing import Collection, Iterable, Mapping


class LifecycleState(str, Enum):
    ACTIVE = "active"
    ADAPTING = "adapting"
    RETIRED = "retired"


class TopologyError(Exception):
    """Precondition failure of a structural transform."""


class UnknownInhabitant(TopologyError):
    pass


class UnknownNode(TopologyError):
    pass


class IdCollision(TopologyError):
    pass


class SelfMerge(TopologyError):
    pass


class SelfLink(TopologyError):
    pass


class DuplicateLink(TopologyError):
    pass


class UnknownLink(TopologyError):
    pass


class PartitionNotExhaustive(TopologyError):
    pass


class PartitionEmptySide(TopologyError):
    pass


class InvariantViolation(Exception):
    """A transform produced an inconsistent colony. Always a bug; fatal."""


LinkKey = frozenset  # frozenset of two inhabitant ids


def link_key(a: int, b: int) -> LinkKey:
    if a == b:
        raise SelfLink(f"link {a}-{b} is a self-loop")
    return frozenset((a, b))


@dataclass(frozen=True)
class FunctionSpec:
    """A delegated piece of system functionality an inhabitant can host."""

    name: str
    mean_service_time_ms: float
    resource_demand: float
    request_bytes: float = 256.0

    def __post_init__(self):
        if self.mean_service_time_ms <= 0:
            raise ValueError(f"function {self.name}: service time must be > 0")
        if self.resource_demand <= 0:
            raise ValueError(f"function {self.name}: resource demand must be > 0")


@dataclass(frozen=True)
class ComputeNode:
    id: str
    capacity: float


@dataclass(frozen=True)
class InhabitantRecord:
    functions: frozenset[str]
    node: str
    state: LifecycleState = LifecycleState.ACTIVE
    replica_group: str | None = None


@dataclass(frozen=True)
class Topology:
    inhabitants: dict[int, InhabitantRecord]
    links: dict[LinkKey, float]

    # -- queries ------------------------------------------------------

    def live(self, iid: int) -> bool:
        rec = self.inhabitants.get(iid)
        return rec is not None and rec.state is not LifecycleState.RETIRED

    def live_ids(self) -> list[int]:
        return sorted(i for i in self.inhabitants if self.live(i))

    def require_live(self, iid: int) -> InhabitantRecord:
        if not self.live(iid):
            raise UnknownInhabitant(f"inhabitant {iid} is unknown or retired")
        return self.inhabitants[iid]

    def neighbors(self, iid: int) -> set[int]:
        out: set[int] = set()
        for key in self.links:
            if iid in key:
                out.update(key - {iid})
        return out

    def link_latency(self, a: int, b: int) -> float:
        key = link_key(a, b)
        if key not in self.links:
            raise UnknownLink(f"no link {a}-{b}")
        return self.links[key]

    def has_link(self, a: int, b: int) -> bool:
        return a != b and frozenset((a, b)) in self.links

    def hosted_functions(self) -> set[str]:
        out: set[str] = set()
        for iid in self.inhabitants:
            if self.live(iid):
                out |= self.inhabitants[iid].functions
        return out

    def hosts_of(self, function: str) -> list[int]:
        return sorted(
            i for i in self.inhabitants
            if self.live(i) and function in self.inhabitants[i].functions
        )

    def replica_groups(self) -> dict[str, list[int]]:
        groups: dict[str, list[int]] = {}
        for iid in self.live_ids():
            gid = self.inhabitants[iid].replica_group
            if gid is not None:
                groups.setdefault(gid, []).append(iid)
        return groups

    def footprint(self, demand: Mapping[str, float]) -> float:
        """Capacity units occupied by hosted functions; replicas count each."""
        total = 0.0
        for iid in self.live_ids():
            for fn in self.inhabitants[iid].functions:
                total += demand[fn]
        return total

    # -- small functional updates --------------------------------------

    def with_state(self, iid: int, state: LifecycleState) -> "Topology":
        rec = self.inhabitants[iid]
        inhs = dict(self.inhabitants)
        inhs[iid] = replace(rec, state=state)
        return Topology(inhs, dict(self.links))


def _strip_group(inhs: dict[int, InhabitantRecord], iid: int) -> None:
    """Remove iid from its replica group; dissolve groups of one.

    Replica-group membership requires identical function sets, so any
    transform that changes a member's functions must call this.
    """
    rec = inhs[iid]
    gid = rec.replica_group
    if gid is None:
        return
    inhs[iid] = replace(rec, replica_group=None)
    remaining = [j for j, r in inhs.items()
                 if r.replica_group == gid and r.state is not LifecycleState.RETIRED]
    if len(remaining) == 1:
        only = remaining[0]
        inhs[only] = replace(inhs[only], replica_group=None)


def apply_split(
    topology: Topology,
    target: int,
    keep: Iterable[str],
    move: Iterable[str],
    new_id: int,
    *,
    link_latency: float = 0.0,
    rewire_neighbors: Collection[int] = (),
) -> Topology:
    """Divide one inhabitant into two.

    ``target`` keeps the ``keep`` functions; ``new_id`` is created on the
    same node hosting ``move``. A link between the siblings is always
    added. A pre-existing link of ``target`` is additionally duplicated
    to ``new_id`` for each neighbor in ``rewire_neighbors`` (callers pass
    the neighbors whose recorded calls target a moved function).
    """
    rec = topology.require_live(target)
    keep_set, move_set = frozenset(keep), frozenset(move)
    if not keep_set or not move_set:
        raise PartitionEmptySide("both sides of a split must host at least one function")
    if keep_set & move_set or (keep_set | move_set) != rec.functions:
        raise PartitionNotExhaustive(
            f"partition must cover exactly the functions of inhabitant {target}")
    if new_id in topology.inhabitants:
        raise IdCollision(f"inhabitant id {new_id} already used")

    inhs = dict(topology.inhabitants)
    _strip_group(inhs, target)
    inhs[target] = replace(inhs[target], functions=keep_set)
    inhs[new_id] = InhabitantRecord(functions=move_set, node=rec.node)

    links = dict(topology.links)
    links[link_key(target, new_id)] = float(link_latency)
    for neighbor in sorted(set(rewire_neighbors)):
        key = link_key(target, neighbor)
        if neighbor != new_id and key in topology.links:
            links[link_key(new_id, neighbor)] = topology.links[key]
    return Topology(inhs, links)


def apply_merge(topology: Topology, source: int, target: int) -> Topology:
    """Absorb ``source`` into ``target``; ``source`` retires.

    Links of ``source`` are redirected to ``target``; a parallel link is
    deduplicated keeping the smaller latency, so a merge never degrades
    an existing path.
    """
    if source == target:
        raise SelfMerge(f"inhabitant {source} cannot merge with itself")
    src = topology.require_live(source)
    tgt = topology.require_live(target)

    inhs = dict(topology.inhabitants)
    _strip_group(inhs, source)
    if not src.functions <= tgt.functions:
        _strip_group(inhs, target)
    inhs[target] = replace(inhs[target], functions=tgt.functions | src.functions)
    inhs[source] = replace(inhs[source], state=LifecycleState.RETIRED,
                           replica_group=None)

    links: dict[LinkKey, float] = {}
    for key, latency in topology.links.items():
        if source in key:
            (other,) = key - {source}
            if other == target:
                continue
            key = link_key(target, other)
        links[key] = min(latency, links.get(key, latency))
    return Topology(inhs, links)


def apply_replicate(
    topology: Topology,
    target: int,
    new_id: int,
    node: str,
    *,
    known_nodes: Collection[str] | None = None,
) -> Topology:
    """Create a load-sharing copy of ``target`` on ``node``.

    All of target's links are mirrored onto the replica and the two are
    tied into a replica group so the router can balance requests.
    """
    rec = topology.require_live(target)
    if new_id in topology.inhabitants:
        raise IdCollision(f"inhabitant id {new_id} already used")
    if known_nodes is not None and node not in known_nodes:
        raise UnknownNode(f"compute node {node!r} does not exist")

    gid = rec.replica_group or f"rg{target}"
    inhs = dict(topology.inhabitants)
    inhs[target] = replace(rec, replica_group=gid)
    inhs[new_id] = InhabitantRecord(functions=rec.functions, node=node,
                                    replica_group=gid)

    links = dict(topology.links)
    for key, latency in topology.links.items():
        if target in key:
            (other,) = key - {target}
            links[link_key(new_id, other)] = latency
    return Topology(inhs, links)


def add_link(topology: Topology, a: int, b: int, latency: float) -> Topology:
    topology.require_live(a)
    topology.require_live(b)
    key = link_key(a, b)
    if key in topology.links:
        raise DuplicateLink(f"link {a}-{b} already exists")
    links = dict(topology.links)
    links[key] = float(latency)
    return Topology(dict(topology.inhabitants), links)


def remove_link(topology: Topology, a: int, b: int) -> Topology:
    topology.require_live(a)
    topology.require_live(b)
    key = link_key(a, b)
    if key not in topology.links:
        raise UnknownLink(f"no link {a}-{b} to remove")
    links = dict(topology.links)
    del links[key]
    return Topology(dict(topology.inhabitants), links)


def check_invariants(topology: Topology, initial_functions: set[str] | None = None) -> None:
    """Raise InvariantViolation if the colony is structurally inconsistent."""
    for key in topology.links:
        if len(key) != 2:
            raise InvariantViolation(f"malformed link key {set(key)}")
        for iid in key:
            if not topology.live(iid):
                raise InvariantViolation(f"link endpoint {iid} is not live")
    groups: dict[str, list[frozenset[str]]] = {}
    for iid in topology.live_ids():
        rec = topology.inhabitants[iid]
        if not rec.functions:
            raise InvariantViolation(f"inhabitant {iid} hosts no functions")
        if rec.replica_group is not None:
            groups.setdefault(rec.replica_group, []).append(rec.functions)
    for gid, sets in groups.items():
        if any(s != sets[0] for s in sets):
            raise InvariantViolation(f"replica group {gid} members diverge")
    if initial_functions is not None:
        hosted = topology.hosted_functions()
        if hosted != initial_functions:
            missing = initial_functions - hosted
            extra = hosted - initial_functions
            raise InvariantViolation(
                f"function conservation broken (missing={sorted(missing)}, "
                f"extra={sorted(extra)})")


def serialize(topology: Topology) -> str:
    """Canonical byte-stable text form. Retired inhabitants are omitted."""
    lines = ["colony v1"]
    for iid in topology.live_ids():
        rec = topology.inhabitants[iid]
        fns = ",".join(sorted(rec.functions))
        lines.append(
            f"inhabitant {iid} node={rec.node} state={rec.state.value} functions={fns}")
    for key in sorted(topology.links, key=lambda k: tuple(sorted(k))):
        a, b = sorted(key)
        lines.append(f"link {a} {b} latency={topology.links[key]!r}")
    for gid, members in sorted(topology.replica_groups().items()):
        lines.append(f"replica-group {gid} members={','.join(map(str, members))}")
    return "\n".join(lines) + "\n"


def digest(topology: Topology) -> str:
    return hashlib.sha256(serialize(topology).encode()).hexdigest()
