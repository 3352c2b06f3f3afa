"""Scenario files: the colony, its rules, the workload, and run config.

Scenarios are TOML documents (conventionally ``*.colony``); JSON with the
same structure is accepted too. Validation reports the offending field by
path. A parsed scenario can be serialized back to a canonical JSON dict
without loss.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .rules import Rule, RuleError, RuleSet
from .topology import ComputeNode, FunctionSpec, InhabitantRecord, Topology, link_key

_NAME_RE = re.compile(r"^[A-Za-z0-9_-]+$")


class ScenarioSyntaxError(Exception):
    pass


class ScenarioValidationError(Exception):
    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.field_path = path


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    horizon_ms: float = 10_000.0
    tick_ms: float = 100.0
    drain_timeout_ms: float = 10_000.0
    service_time_mode: str = "exponential"
    env_latency_ms: float = 1.0
    split_link_latency_ms: float = 0.0
    proposal_deadline_ms: float | None = None
    proposal_cutoff_ms: float | None = None


@dataclass(frozen=True)
class InhabitantDef:
    id: int
    node: str
    functions: tuple[str, ...]


@dataclass(frozen=True)
class LinkDef:
    a: int
    b: int
    latency_ms: float = 1.0


@dataclass(frozen=True)
class RuleDef:
    inhabitant: int
    rule: Rule


@dataclass(frozen=True)
class PhaseDef:
    start_ms: float
    end_ms: float
    process: str                  # "poisson" | "constant"
    rates: dict                   # function -> requests per second


@dataclass(frozen=True)
class DirectiveDef:
    at_ms: float
    inhabitant: int
    op: str                       # "add" | "modify" | "delete"
    rule: Rule | None = None
    rule_id: int | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    run: RunConfig
    nodes: tuple[ComputeNode, ...]
    functions: tuple[FunctionSpec, ...]
    inhabitants: tuple[InhabitantDef, ...]
    links: tuple[LinkDef, ...]
    interfaces: dict          # function -> inhabitant id
    rules: tuple[RuleDef, ...]
    phases: tuple[PhaseDef, ...]
    directives: tuple[DirectiveDef, ...] = ()

    def digest(self) -> str:
        text = json.dumps(to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def function_specs(self) -> dict:
        return {f.name: f for f in self.functions}

    def node_capacities(self) -> dict:
        return {n.id: n.capacity for n in self.nodes}

    def initial_topology(self) -> Topology:
        inhabitants = {
            d.id: InhabitantRecord(functions=frozenset(d.functions), node=d.node)
            for d in self.inhabitants
        }
        links = {link_key(l.a, l.b): float(l.latency_ms) for l in self.links}
        return Topology(inhabitants, links)

    def rules_for(self, iid: int) -> RuleSet:
        return RuleSet([rd.rule for rd in self.rules if rd.inhabitant == iid])


# -- parsing -------------------------------------------------------------


def _require(data: dict, key: str, types, path: str):
    if key not in data:
        raise ScenarioValidationError(f"{path}.{key}", "missing required field")
    value = data[key]
    if not isinstance(value, types):
        raise ScenarioValidationError(
            f"{path}.{key}", f"expected {types}, got {type(value).__name__}")
    return value


def _number(data: dict, key: str, path: str, default=None, minimum=None,
            strict_min=False):
    if key not in data:
        if default is None:
            raise ScenarioValidationError(f"{path}.{key}", "missing required field")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioValidationError(f"{path}.{key}", "expected a number")
    value = float(value)
    if minimum is not None and (value < minimum or (strict_min and value <= minimum)):
        op = ">" if strict_min else ">="
        raise ScenarioValidationError(f"{path}.{key}", f"must be {op} {minimum}")
    return value


def _parse_rule(data: dict, path: str) -> Rule:
    try:
        return Rule(
            rule_id=int(_require(data, "id", int, path)),
            metric=_require(data, "metric", str, path),
            aggregate=_require(data, "aggregate", str, path),
            comparator=_require(data, "comparator", str, path),
            threshold=_number(data, "threshold", path),
            window_ms=_number(data, "window_ms", path, minimum=0, strict_min=True),
            action=_require(data, "action", str, path),
            params=dict(data.get("params", {})),
            cooldown_ms=_number(data, "cooldown_ms", path, default=0.0, minimum=0),
        )
    except RuleError as exc:
        raise ScenarioValidationError(path, str(exc)) from exc


def from_dict(data: dict, *, name: str = "scenario") -> Scenario:
    """Build and validate a Scenario from plain parsed data."""
    if not isinstance(data, dict):
        raise ScenarioValidationError("$", "scenario must be a table")
    name = data.get("name", name)

    run_raw = data.get("run", {})
    run = RunConfig(
        seed=int(_number(run_raw, "seed", "run", default=0.0)),
        horizon_ms=_number(run_raw, "horizon_ms", "run", default=10_000.0,
                           minimum=0, strict_min=True),
        tick_ms=_number(run_raw, "tick_ms", "run", default=100.0,
                        minimum=0, strict_min=True),
        drain_timeout_ms=_number(run_raw, "drain_timeout_ms", "run",
                                 default=10_000.0, minimum=0),
        service_time_mode=run_raw.get("service_time_mode", "exponential"),
        env_latency_ms=_number(run_raw, "env_latency_ms", "run", default=1.0,
                               minimum=0),
        split_link_latency_ms=_number(run_raw, "split_link_latency_ms", "run",
                                      default=0.0, minimum=0),
        proposal_deadline_ms=(
            _number(run_raw, "proposal_deadline_ms", "run", minimum=0,
                    strict_min=True)
            if "proposal_deadline_ms" in run_raw else None),
        proposal_cutoff_ms=(
            _number(run_raw, "proposal_cutoff_ms", "run", minimum=0)
            if "proposal_cutoff_ms" in run_raw else None),
    )
    if run.service_time_mode not in ("exponential", "constant"):
        raise ScenarioValidationError(
            "run.service_time_mode", "must be 'exponential' or 'constant'")

    nodes: list[ComputeNode] = []
    seen_nodes: set[str] = set()
    for i, raw in enumerate(data.get("nodes", [])):
        path = f"nodes[{i}]"
        nid = _require(raw, "id", str, path)
        if nid in seen_nodes:
            raise ScenarioValidationError(f"{path}.id", f"duplicate node id {nid!r}")
        seen_nodes.add(nid)
        nodes.append(ComputeNode(
            id=nid,
            capacity=_number(raw, "capacity", path, minimum=0, strict_min=True)))
    if not nodes:
        raise ScenarioValidationError("nodes", "at least one compute node required")

    functions: list[FunctionSpec] = []
    fn_names: set[str] = set()
    for i, raw in enumerate(data.get("functions", [])):
        path = f"functions[{i}]"
        fname = _require(raw, "name", str, path)
        if not _NAME_RE.match(fname):
            raise ScenarioValidationError(f"{path}.name",
                                          f"invalid function name {fname!r}")
        if fname in fn_names:
            raise ScenarioValidationError(f"{path}.name",
                                          f"duplicate function {fname!r}")
        fn_names.add(fname)
        functions.append(FunctionSpec(
            name=fname,
            mean_service_time_ms=_number(raw, "mean_service_time_ms", path,
                                         minimum=0, strict_min=True),
            resource_demand=_number(raw, "resource_demand", path,
                                    minimum=0, strict_min=True),
            request_bytes=_number(raw, "request_bytes", path, default=256.0,
                                  minimum=0)))
    if not functions:
        raise ScenarioValidationError("functions", "at least one function required")

    inhabitants: list[InhabitantDef] = []
    ids: set[int] = set()
    hosted: set[str] = set()
    for i, raw in enumerate(data.get("inhabitants", [])):
        path = f"inhabitants[{i}]"
        iid = _require(raw, "id", int, path)
        if iid <= 0:
            raise ScenarioValidationError(f"{path}.id", "ids are positive integers")
        if iid in ids:
            raise ScenarioValidationError(f"{path}.id", f"duplicate inhabitant {iid}")
        ids.add(iid)
        node = _require(raw, "node", str, path)
        if node not in seen_nodes:
            raise ScenarioValidationError(f"{path}.node", f"unknown node {node!r}")
        fns = _require(raw, "functions", list, path)
        if not fns:
            raise ScenarioValidationError(f"{path}.functions",
                                          "an inhabitant hosts at least one function")
        for fn in fns:
            if fn not in fn_names:
                raise ScenarioValidationError(f"{path}.functions",
                                              f"unknown function {fn!r}")
        if len(set(fns)) != len(fns):
            raise ScenarioValidationError(f"{path}.functions", "duplicate entries")
        hosted.update(fns)
        inhabitants.append(InhabitantDef(id=iid, node=node, functions=tuple(fns)))
    if not inhabitants:
        raise ScenarioValidationError("inhabitants", "colony is empty")
    unhosted = fn_names - hosted
    if unhosted:
        raise ScenarioValidationError(
            "functions", f"functions hosted by nobody: {sorted(unhosted)}")

    links: list[LinkDef] = []
    seen_links: set[frozenset] = set()
    for i, raw in enumerate(data.get("links", [])):
        path = f"links[{i}]"
        a = _require(raw, "a", int, path)
        b = _require(raw, "b", int, path)
        if a == b:
            raise ScenarioValidationError(path, "self-links are not allowed")
        for end, key in ((a, "a"), (b, "b")):
            if end not in ids:
                raise ScenarioValidationError(f"{path}.{key}",
                                              f"unknown inhabitant {end}")
        pair = frozenset((a, b))
        if pair in seen_links:
            raise ScenarioValidationError(path, f"duplicate link {a}-{b}")
        seen_links.add(pair)
        links.append(LinkDef(a=a, b=b,
                             latency_ms=_number(raw, "latency_ms", path,
                                                default=1.0, minimum=0)))

    interfaces: dict = {}
    host_map = {d.id: set(d.functions) for d in inhabitants}
    for fn, iid in data.get("interfaces", {}).items():
        path = f"interfaces.{fn}"
        if fn not in fn_names:
            raise ScenarioValidationError(path, f"unknown function {fn!r}")
        if not isinstance(iid, int) or iid not in ids:
            raise ScenarioValidationError(path, f"unknown inhabitant {iid}")
        if fn not in host_map[iid]:
            raise ScenarioValidationError(
                path, f"inhabitant {iid} does not host {fn!r}")
        interfaces[fn] = iid

    rule_defs: list[RuleDef] = []
    per_inhabitant: dict[int, set[int]] = {}
    for i, raw in enumerate(data.get("rules", [])):
        path = f"rules[{i}]"
        owner = _require(raw, "inhabitant", int, path)
        if owner not in ids:
            raise ScenarioValidationError(f"{path}.inhabitant",
                                          f"unknown inhabitant {owner}")
        rule = _parse_rule(raw, path)
        taken = per_inhabitant.setdefault(owner, set())
        if rule.rule_id in taken:
            raise ScenarioValidationError(
                f"{path}.id", f"duplicate rule id {rule.rule_id} on {owner}")
        taken.add(rule.rule_id)
        rule_defs.append(RuleDef(inhabitant=owner, rule=rule))

    phases: list[PhaseDef] = []
    prev_end = None
    for i, raw in enumerate(data.get("phases", [])):
        path = f"phases[{i}]"
        start = _number(raw, "start_ms", path, minimum=0)
        end = _number(raw, "end_ms", path, minimum=0)
        if end <= start:
            raise ScenarioValidationError(f"{path}.end_ms", "phase ends before it starts")
        if prev_end is not None and start < prev_end:
            raise ScenarioValidationError(
                f"{path}.start_ms", "phases must be ordered and non-overlapping")
        prev_end = end
        process = raw.get("process", "poisson")
        if process not in ("poisson", "constant"):
            raise ScenarioValidationError(f"{path}.process",
                                          "must be 'poisson' or 'constant'")
        rates = {}
        for fn, rate in _require(raw, "rates", dict, path).items():
            if fn not in fn_names:
                raise ScenarioValidationError(f"{path}.rates.{fn}",
                                              f"unknown function {fn!r}")
            if isinstance(rate, bool) or not isinstance(rate, (int, float)) or rate < 0:
                raise ScenarioValidationError(f"{path}.rates.{fn}",
                                              "rate must be a number >= 0")
            if rate > 0 and fn not in interfaces:
                raise ScenarioValidationError(
                    f"{path}.rates.{fn}",
                    f"function {fn!r} receives workload but has no interface entry")
            rates[fn] = float(rate)
        phases.append(PhaseDef(start_ms=start, end_ms=end, process=process,
                               rates=rates))

    directives: list[DirectiveDef] = []
    for i, raw in enumerate(data.get("directives", [])):
        path = f"directives[{i}]"
        owner = _require(raw, "inhabitant", int, path)
        if owner not in ids:
            raise ScenarioValidationError(f"{path}.inhabitant",
                                          f"unknown inhabitant {owner}")
        op = _require(raw, "op", str, path)
        if op not in ("add", "modify", "delete"):
            raise ScenarioValidationError(f"{path}.op",
                                          "op must be add, modify or delete")
        rule = None
        rule_id = None
        if op == "delete":
            rule_id = _require(raw, "rule_id", int, path)
        else:
            rule = _parse_rule(_require(raw, "rule", dict, path), f"{path}.rule")
        directives.append(DirectiveDef(
            at_ms=_number(raw, "at_ms", path, minimum=0), inhabitant=owner,
            op=op, rule=rule, rule_id=rule_id))

    return Scenario(
        name=name, run=run, nodes=tuple(nodes), functions=tuple(functions),
        inhabitants=tuple(inhabitants), links=tuple(links),
        interfaces=interfaces, rules=tuple(rule_defs), phases=tuple(phases),
        directives=tuple(directives))


def load(path) -> Scenario:
    """Parse a scenario file (.colony/.toml TOML or .json)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    raw = p.read_bytes()
    if p.suffix == ".json":
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ScenarioSyntaxError(f"{p}: {exc}") from exc
    else:
        try:
            data = tomllib.loads(raw.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioSyntaxError(f"{p}: {exc}") from exc
    return from_dict(data, name=p.stem)


def to_dict(scenario: Scenario) -> dict:
    """Canonical plain-data form; from_dict(to_dict(s)) == s."""
    def rule_dict(rule: Rule, owner: int | None = None) -> dict:
        out = {} if owner is None else {"inhabitant": owner}
        out.update({
            "id": rule.rule_id, "metric": rule.metric,
            "aggregate": rule.aggregate, "comparator": rule.comparator,
            "threshold": rule.threshold, "window_ms": rule.window_ms,
            "action": rule.action, "params": dict(rule.params),
            "cooldown_ms": rule.cooldown_ms,
        })
        return out

    run = {k: v for k, v in asdict(scenario.run).items() if v is not None}
    out = {
        "name": scenario.name,
        "run": run,
        "nodes": [{"id": n.id, "capacity": n.capacity} for n in scenario.nodes],
        "functions": [asdict(f) for f in scenario.functions],
        "inhabitants": [{"id": d.id, "node": d.node,
                         "functions": list(d.functions)}
                        for d in scenario.inhabitants],
        "links": [{"a": l.a, "b": l.b, "latency_ms": l.latency_ms}
                  for l in scenario.links],
        "interfaces": dict(sorted(scenario.interfaces.items())),
        "rules": [rule_dict(rd.rule, rd.inhabitant) for rd in scenario.rules],
        "phases": [{"start_ms": ph.start_ms, "end_ms": ph.end_ms,
                    "process": ph.process,
                    "rates": dict(sorted(ph.rates.items()))}
                   for ph in scenario.phases],
    }
    if scenario.directives:
        dirs = []
        for d in scenario.directives:
            entry = {"at_ms": d.at_ms, "inhabitant": d.inhabitant, "op": d.op}
            if d.op == "delete":
                entry["rule_id"] = d.rule_id
            else:
                entry["rule"] = rule_dict(d.rule)
            dirs.append(entry)
        out["directives"] = dirs
    return out


def apply_overrides(data: dict, overrides: dict) -> dict:
    """Apply dotted-path overrides (e.g. 'run.horizon_ms') to raw data."""
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        cursor = data
        for part in parts[:-1]:
            if not isinstance(cursor.get(part), dict):
                cursor[part] = {}
            cursor = cursor[part]
        cursor[parts[-1]] = value
    return data


def bundled_path(name: str) -> Path:
    """Path of a scenario shipped with the package."""
    base = Path(__file__).parent / "scenarios"
    candidate = base / f"{name}.colony"
    if not candidate.exists():
        available = sorted(p.stem for p in base.glob("*.colony"))
        raise FileNotFoundError(
            f"no bundled scenario {name!r} (available: {available})")
    return candidate


def resolve(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    if _NAME_RE.match(name_or_path):
        return bundled_path(name_or_path)
    raise FileNotFoundError(name_or_path)
