"""Fault maintenance trees: typed DAG, JSON model files, validation, DOT export.

Durations are stored in years. Model files carry durations as strings with
a unit suffix (``"1d"``, ``"6mo"``, ``"2y"``); 1y = 365d = 12mo.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable

FORMAT_VERSION = 1

EBE = "EBE"
OR = "OR"
RDEP = "RDEP"
EVENT = "EVENT"
NODE_KINDS = (EBE, OR, RDEP, EVENT)

UNITS = {"y": 1.0, "mo": 1.0 / 12.0, "w": 7.0 / 365.0, "d": 1.0 / 365.0, "h": 1.0 / (365.0 * 24.0)}
_DURATION_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(y|mo|w|d|h)\s*$")


class ModelError(ValueError):
    """Raised for unreadable model documents.

    ``path`` names the offending field (``nodes[3].params.mttf``), ``line``
    is set for JSON syntax errors.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(path)
        super().__init__(f"{'; '.join(where)}: {message}" if where else message)


def parse_duration(value, path=None) -> float:
    """Convert ``"6mo"``-style strings (or bare numbers, read as years) to years."""
    if isinstance(value, bool):
        raise ModelError(f"expected a duration, got {value!r}", path)
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ModelError(f"expected a duration string, got {value!r}", path)
    m = _DURATION_RE.match(value)
    if m is None:
        raise ModelError(f"malformed duration {value!r} (use e.g. '1d', '6mo', '2y')", path)
    return float(m.group(1)) * UNITS[m.group(2)]


def format_duration(years: float) -> str:
    return f"{float(years)!r}y"


@dataclass(frozen=True)
class EbeParams:
    degradation_levels: int
    mttf: float
    erlang_phases: int = 1
    label: str = ""
    # False for abstract placeholders: no clean/replace, ignored by thresh/trig.
    maintained: bool = True

    @property
    def level_delay(self) -> float:
        """Mean time spent in each degradation level."""
        return self.mttf / self.degradation_levels


@dataclass(frozen=True)
class RdepParams:
    gamma: float
    trigger: str
    children: tuple[str, ...]


@dataclass(frozen=True)
class FmtNode:
    id: str
    kind: str
    children: tuple[str, ...] = ()
    params: EbeParams | RdepParams | None = None
    name: str = ""
    shadow_of: str | None = None

    @property
    def is_ebe(self) -> bool:
        return self.kind == EBE


@dataclass(frozen=True)
class MaintenancePolicy:
    t_rp: float | None = None
    t_oh: float | None = None
    t_in: float | None = None
    t_cln: float = 1.0 / 365.0
    t_rpl: float = 7.0 / 365.0
    timer_phases: int = 3
    # phases of the clean/replace duration delays (None: same as timer_phases)
    repair_phases: int | None = None

    @property
    def repair_delay_phases(self) -> int:
        return self.timer_phases if self.repair_phases is None else self.repair_phases

    @property
    def has_maintenance(self) -> bool:
        return any(t is not None for t in (self.t_rp, self.t_oh, self.t_in))

    @property
    def cleans(self) -> bool:
        return self.t_rp is not None or self.t_in is not None

    @property
    def replaces(self) -> bool:
        return self.t_oh is not None


NO_MAINTENANCE = MaintenancePolicy()


@dataclass(frozen=True)
class CostModel:
    clean_cost: float = 0.0
    inspect_cost: float = 0.0
    replace_cost: float = 0.0
    operational_rate: float = 0.0
    failure_rate: float = 0.0


@dataclass(frozen=True)
class Violation:
    code: str
    node: str | None
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


@dataclass(frozen=True, eq=True)
class FaultMaintenanceTree:
    """An FMT. ``nodes`` preserves file order and must not be mutated."""

    nodes: dict[str, FmtNode]
    top: str
    policy: MaintenancePolicy = NO_MAINTENANCE
    costs: CostModel = field(default_factory=CostModel)
    name: str = ""
    notes: str = ""

    __hash__ = None

    def __getitem__(self, node_id: str) -> FmtNode:
        return self.nodes[node_id]

    def ebes(self) -> list[FmtNode]:
        return [n for n in self.nodes.values() if n.kind == EBE]

    def parents(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        for node in self.nodes.values():
            for c in node.children:
                if c in out:
                    out[c].append(node.id)
        return out

    def rdeps(self) -> list[FmtNode]:
        return [n for n in self.nodes.values() if n.kind == RDEP]

    def with_policy(self, policy: MaintenancePolicy) -> "FaultMaintenanceTree":
        return replace(self, policy=policy)

    def with_costs(self, costs: CostModel) -> "FaultMaintenanceTree":
        return replace(self, costs=costs)

    def descendants(self, node_id: str) -> list[str]:
        """Node ids reachable from ``node_id`` (inclusive), depth-first preorder."""
        seen: list[str] = []
        mark = set()
        stack = [node_id]
        while stack:
            nid = stack.pop()
            if nid in mark:
                continue
            mark.add(nid)
            seen.append(nid)
            stack.extend(reversed(self.nodes[nid].children))
        return seen

    def failure_leaves(self, node_id: str | None = None) -> list[str]:
        """EBE ids whose failure propagates to ``node_id`` (default: top).

        RDEP vertices pass their dependents' failures upward; shadow copies of
        RDEP triggers are structural only and propagate nothing.
        """
        out: list[str] = []
        seen = set()

        def walk(nid):
            if nid in seen:
                return
            seen.add(nid)
            node = self.nodes[nid]
            if node.kind == EBE:
                if node.shadow_of is None:
                    out.append(nid)
                return
            for c in node.children:
                if self.nodes[c].shadow_of is not None:
                    continue
                walk(c)

        walk(node_id or self.top)
        return out


# --------------------------------------------------------------------------
# JSON I/O


def _require(obj, key, path):
    if not isinstance(obj, dict) or key not in obj:
        raise ModelError(f"missing required field {key!r}", path)
    return obj[key]


def _positive_int(value, path):
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ModelError(f"expected a positive integer, got {value!r}", path)
    return value


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelError(f"expected a number, got {value!r}", path)
    return float(value)


def _opt_duration(obj, key, path):
    value = obj.get(key)
    if value is None:
        return None
    return parse_duration(value, f"{path}.{key}")


def _parse_node(raw, i) -> FmtNode:
    path = f"nodes[{i}]"
    if not isinstance(raw, dict):
        raise ModelError("node must be an object", path)
    nid = _require(raw, "id", path)
    if not isinstance(nid, str) or not nid:
        raise ModelError("node id must be a non-empty string", f"{path}.id")
    kind = _require(raw, "kind", path)
    if kind not in NODE_KINDS:
        raise ModelError(f"unknown node kind {kind!r} (expected one of {', '.join(NODE_KINDS)})", f"{path}.kind")
    children = raw.get("children", [])
    if not isinstance(children, list) or not all(isinstance(c, str) for c in children):
        raise ModelError("children must be a list of node ids", f"{path}.children")
    params = raw.get("params", {}) or {}
    ppath = f"{path}.params"
    name = ""
    node_params = None
    if kind == EBE:
        node_params = EbeParams(
            degradation_levels=_positive_int(_require(params, "degradation_levels", ppath), f"{ppath}.degradation_levels"),
            mttf=parse_duration(_require(params, "mttf", ppath), f"{ppath}.mttf"),
            erlang_phases=_positive_int(params.get("erlang_phases", 1), f"{ppath}.erlang_phases"),
            label=str(params.get("label", "")),
            maintained=bool(params.get("maintained", True)),
        )
        if node_params.mttf <= 0:
            raise ModelError("mttf must be positive", f"{ppath}.mttf")
    elif kind == RDEP:
        trigger = _require(params, "trigger", ppath)
        if not isinstance(trigger, str):
            raise ModelError("trigger must be a node id", f"{ppath}.trigger")
        gamma = _number(_require(params, "gamma", ppath), f"{ppath}.gamma")
        dependents = params.get("dependents")
        if dependents is None:
            dependents = list(children)
        node_params = RdepParams(gamma=gamma, trigger=trigger, children=tuple(dependents))
        name = str(params.get("name", ""))
    else:
        name = str(params.get("name", ""))
    shadow_of = raw.get("shadow_of")
    if shadow_of is not None and not isinstance(shadow_of, str):
        raise ModelError("shadow_of must be a node id", f"{path}.shadow_of")
    return FmtNode(id=nid, kind=kind, children=tuple(children), params=node_params, name=name, shadow_of=shadow_of)


def _parse_policy(raw) -> MaintenancePolicy:
    if raw is None:
        return NO_MAINTENANCE
    path = "policy"
    if not isinstance(raw, dict):
        raise ModelError("policy must be an object", path)
    kw = dict(
        t_rp=_opt_duration(raw, "t_rp", path),
        t_oh=_opt_duration(raw, "t_oh", path),
        t_in=_opt_duration(raw, "t_in", path),
    )
    if raw.get("t_cln") is not None:
        kw["t_cln"] = parse_duration(raw["t_cln"], f"{path}.t_cln")
    if raw.get("t_rpl") is not None:
        kw["t_rpl"] = parse_duration(raw["t_rpl"], f"{path}.t_rpl")
    if "timer_phases" in raw:
        kw["timer_phases"] = _positive_int(raw["timer_phases"], f"{path}.timer_phases")
    if "repair_phases" in raw:
        kw["repair_phases"] = _positive_int(raw["repair_phases"], f"{path}.repair_phases")
    return MaintenancePolicy(**kw)


def _parse_costs(raw) -> CostModel:
    if raw is None:
        return CostModel()
    if not isinstance(raw, dict):
        raise ModelError("costs must be an object", "costs")
    known = CostModel.__dataclass_fields__
    kw = {}
    for key, value in raw.items():
        if key not in known:
            raise ModelError(f"unknown cost field {key!r}", f"costs.{key}")
        kw[key] = _number(value, f"costs.{key}")
    return CostModel(**kw)


def parse_model(text: str, *, check: bool = True) -> FaultMaintenanceTree:
    """Parse a JSON model document.

    Raises ModelError for syntax errors, unknown node kinds, malformed values
    and dangling node references. With ``check`` (the default) structural
    violations found by :func:`validate` are raised as well.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(exc.msg, line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    version = _require(doc, "format_version", "")
    if version != FORMAT_VERSION:
        raise ModelError(f"unsupported format_version {version!r}", "format_version")
    raw_nodes = _require(doc, "nodes", "")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ModelError("nodes must be a non-empty list", "nodes")
    nodes: dict[str, FmtNode] = {}
    for i, raw in enumerate(raw_nodes):
        node = _parse_node(raw, i)
        if node.id in nodes:
            raise ModelError(f"duplicate node id {node.id!r}", f"nodes[{i}].id")
        nodes[node.id] = node
    for i, node in enumerate(nodes.values()):
        for c in node.children:
            if c not in nodes:
                raise ModelError(f"dangling reference to undefined node {c!r}", f"nodes[{i}].children")
        if isinstance(node.params, RdepParams):
            for ref in (node.params.trigger, *node.params.children):
                if ref not in nodes:
                    raise ModelError(f"dangling reference to undefined node {ref!r}", f"nodes[{i}].params")
        if node.shadow_of is not None and node.shadow_of not in nodes:
            raise ModelError(f"dangling reference to undefined node {node.shadow_of!r}", f"nodes[{i}].shadow_of")
    top = _require(doc, "top", "")
    if top not in nodes:
        raise ModelError(f"top event {top!r} is not a defined node", "top")
    tree = FaultMaintenanceTree(
        nodes=nodes,
        top=top,
        policy=_parse_policy(doc.get("policy")),
        costs=_parse_costs(doc.get("costs")),
        name=str(doc.get("name", "")),
        notes=str(doc.get("notes", "")),
    )
    if check:
        problems = validate(tree)
        if problems:
            raise ModelError("; ".join(str(v) for v in problems))
    return tree


def load_model(path, *, check: bool = True) -> FaultMaintenanceTree:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read(), check=check)


def bundled_model(name: str = "hvac") -> FaultMaintenanceTree:
    """Load one of the models shipped in ``fmtcheck/data`` (``hvac``, ``toy_*``...)."""
    fname = name if name.endswith(".json") else f"{name}.fmt.json"
    text = resources.files("fmtcheck").joinpath("data", fname).read_text(encoding="utf-8")
    return parse_model(text)


def bundled_path(name: str) -> str:
    fname = name if name.endswith(".json") else f"{name}.fmt.json"
    return str(resources.files("fmtcheck").joinpath("data", fname))


def _node_to_dict(node: FmtNode) -> dict:
    out: dict = {"id": node.id, "kind": node.kind}
    p = node.params
    if isinstance(p, EbeParams):
        params = {
            "degradation_levels": p.degradation_levels,
            "mttf": format_duration(p.mttf),
            "erlang_phases": p.erlang_phases,
            "label": p.label,
        }
        if not p.maintained:
            params["maintained"] = False
        out["params"] = params
    elif isinstance(p, RdepParams):
        params = {"gamma": p.gamma, "trigger": p.trigger}
        if tuple(p.children) != tuple(node.children):
            params["dependents"] = list(p.children)
        if node.name:
            params["name"] = node.name
        out["params"] = params
    elif node.name:
        out["params"] = {"name": node.name}
    if node.shadow_of is not None:
        out["shadow_of"] = node.shadow_of
    out["children"] = list(node.children)
    return out


def to_dict(tree: FaultMaintenanceTree) -> dict:
    pol = tree.policy
    doc = {"format_version": FORMAT_VERSION}
    if tree.name:
        doc["name"] = tree.name
    if tree.notes:
        doc["notes"] = tree.notes
    doc["nodes"] = [_node_to_dict(n) for n in tree.nodes.values()]
    doc["top"] = tree.top
    doc["policy"] = {
        "t_rp": None if pol.t_rp is None else format_duration(pol.t_rp),
        "t_oh": None if pol.t_oh is None else format_duration(pol.t_oh),
        "t_in": None if pol.t_in is None else format_duration(pol.t_in),
        "t_cln": format_duration(pol.t_cln),
        "t_rpl": format_duration(pol.t_rpl),
        "timer_phases": pol.timer_phases,
    }
    if pol.repair_phases is not None:
        doc["policy"]["repair_phases"] = pol.repair_phases
    doc["costs"] = {k: getattr(tree.costs, k) for k in CostModel.__dataclass_fields__}
    return doc


def serialize(tree: FaultMaintenanceTree) -> str:
    return json.dumps(to_dict(tree), indent=2) + "\n"


# --------------------------------------------------------------------------
# Validation


def _find_cycle(tree: FaultMaintenanceTree) -> list[str] | None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in tree.nodes}
    for root in tree.nodes:
        if color[root] != WHITE:
            continue
        stack = [(root, iter(tree.nodes[root].children))]
        path = [root]
        color[root] = GREY
        while stack:
            nid, it = stack[-1]
            child = next(it, None)
            if child is None:
                color[nid] = BLACK
                stack.pop()
                path.pop()
                continue
            if child not in color:
                continue
            if color[child] == GREY:
                return path[path.index(child):] + [child]
            if color[child] == WHITE:
                color[child] = GREY
                stack.append((child, iter(tree.nodes[child].children)))
                path.append(child)
    return None


def validate(tree: FaultMaintenanceTree) -> list[Violation]:
    """Structural and parameter checks; returns violations, never raises."""
    out: list[Violation] = []
    nodes = tree.nodes
    if tree.top not in nodes:
        out.append(Violation("MissingTopEvent", tree.top, f"top event {tree.top!r} is not defined"))
    for node in nodes.values():
        for c in node.children:
            if c not in nodes:
                out.append(Violation("DanglingReference", node.id, f"{node.id} references undefined node {c!r}"))
    cycle = _find_cycle(tree)
    if cycle:
        out.append(Violation("Cycle", cycle[0], "cycle " + " -> ".join(cycle)))

    parents = tree.parents()
    roots = [nid for nid, ps in parents.items() if not ps]
    extra_roots = [r for r in roots if r != tree.top]
    if extra_roots:
        out.append(Violation("MultipleTopEvents", extra_roots[0], f"more than one top event: {sorted(roots)}"))
    if tree.top in nodes and parents.get(tree.top):
        out.append(Violation("MultipleTopEvents", tree.top, f"top event {tree.top} has parents {parents[tree.top]}"))

    for node in nodes.values():
        if node.kind == EBE:
            p = node.params
            if node.children:
                out.append(Violation("EbeHasChildren", node.id, f"EBE {node.id} must be a leaf"))
            if not isinstance(p, EbeParams):
                out.append(Violation("InvalidParameter", node.id, f"EBE {node.id} lacks parameters"))
            else:
                if p.degradation_levels < 1 or p.erlang_phases < 1:
                    out.append(Violation("InvalidParameter", node.id, f"EBE {node.id}: levels and phases must be >= 1"))
                if not p.mttf > 0:
                    out.append(Violation("InvalidParameter", node.id, f"EBE {node.id}: mttf must be positive"))
            if node.shadow_of is not None:
                orig = nodes.get(node.shadow_of)
                if orig is None or orig.kind != EBE:
                    out.append(Violation("ShadowNotEbe", node.id, f"{node.id} shadows non-EBE {node.shadow_of!r}"))
        elif node.kind == OR:
            if len(node.children) < 2:
                out.append(Violation("OrArity", node.id, f"OR gate {node.id} needs at least 2 inputs"))
        elif node.kind == EVENT:
            if len(node.children) != 1:
                out.append(Violation("EventArity", node.id, f"event {node.id} must have exactly one input"))
        elif node.kind == RDEP:
            p = node.params
            if not isinstance(p, RdepParams):
                out.append(Violation("InvalidParameter", node.id, f"RDEP {node.id} lacks parameters"))
                continue
            if not p.gamma > 0:
                out.append(Violation("InvalidParameter", node.id, f"RDEP {node.id}: gamma must be positive"))
            trig = nodes.get(p.trigger)
            if trig is None:
                out.append(Violation("DanglingReference", node.id, f"RDEP {node.id} trigger {p.trigger!r} undefined"))
            elif trig.kind != EBE:
                out.append(Violation("RdepTriggerNotEbe", node.id, f"RDEP {node.id} is triggered by {trig.kind} {trig.id}"))
            if not p.children:
                out.append(Violation("RdepNoChildren", node.id, f"RDEP {node.id} has no dependent children"))
            if p.trigger in p.children:
                out.append(Violation("RdepTriggerIsChild", node.id, f"RDEP {node.id} trigger is also a dependent"))
            for c in p.children:
                cn = nodes.get(c)
                if cn is None:
                    out.append(Violation("DanglingReference", node.id, f"RDEP {node.id} dependent {c!r} undefined"))
                elif cn.kind != EBE or cn.shadow_of is not None:
                    out.append(Violation("RdepChildNotEbe", node.id, f"RDEP {node.id} dependent {c} is not an EBE"))
            for c in node.children:
                if c not in p.children and (c not in nodes or nodes[c].shadow_of != p.trigger):
                    out.append(Violation("RdepChildMismatch", node.id, f"RDEP {node.id} input {c} is not a dependent"))

    pol = tree.policy
    for key in ("t_rp", "t_oh", "t_in", "t_cln", "t_rpl"):
        value = getattr(pol, key)
        if value is not None and not value > 0:
            out.append(Violation("InvalidParameter", None, f"policy.{key} must be positive"))
    if pol.timer_phases < 1:
        out.append(Violation("InvalidParameter", None, "policy.timer_phases must be >= 1"))
    if pol.repair_phases is not None and pol.repair_phases < 1:
        out.append(Violation("InvalidParameter", None, "policy.repair_phases must be >= 1"))
    if pol.cleans and pol.replaces and pol.t_cln == pol.t_rpl:
        out.append(Violation("CleanEqualsReplace", None, "t_cln and t_rpl must differ"))
    for key in CostModel.__dataclass_fields__:
        if getattr(tree.costs, key) < 0:
            out.append(Violation("InvalidParameter", None, f"costs.{key} must be >= 0"))
    return out


# --------------------------------------------------------------------------
# Transformations


def shadow_id(trigger: str, rdep: str) -> str:
    return f"{trigger}@{rdep}"


def duplicate_rdep_inputs(tree: FaultMaintenanceTree) -> FaultMaintenanceTree:
    """Give every RDEP a local copy of its trigger EBE.

    The copy is an EBE node with ``shadow_of`` pointing at the original, added
    as an extra input of the RDEP vertex. Downstream CTMC construction maps the
    copy onto the original's stochastic process. Idempotent.
    """
    nodes = dict(tree.nodes)
    changed = False
    for node in tree.rdeps():
        trig = node.params.trigger
        has_local = any(
            c == trig or nodes[c].shadow_of == trig for c in node.children
        )
        if has_local:
            continue
        sid = shadow_id(trig, node.id)
        orig = nodes[trig]
        nodes[sid] = FmtNode(id=sid, kind=EBE, params=orig.params, name=orig.name, shadow_of=trig)
        nodes[node.id] = replace(node, children=node.children + (sid,))
        changed = True
    if not changed:
        return tree
    return replace(tree, nodes=nodes)


# --------------------------------------------------------------------------
# DOT export


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(tree: FaultMaintenanceTree) -> str:
    lines = [f"digraph {_dot_quote(tree.name or 'fmt')} {{", "  rankdir=TB;"]
    for node in tree.nodes.values():
        if node.kind == EBE:
            p = node.params
            label = node.id if not p.label else f"{node.id}\\n{p.label}"
            style = ', style=dashed' if node.shadow_of else ""
            lines.append(f"  {_dot_quote(node.id)} [shape=circle, label={_dot_quote(label)}{style}];")
        elif node.kind == RDEP:
            label = f"RDEP {node.id}\\ngamma={node.params.gamma:g}"
            lines.append(f"  {_dot_quote(node.id)} [shape=diamond, style=filled, fillcolor=lightgrey, label={_dot_quote(label)}];")
        elif node.kind == OR:
            label = f"{node.name or node.id}\\nOR"
            lines.append(f"  {_dot_quote(node.id)} [shape=box, label={_dot_quote(label)}];")
        else:
            lines.append(f"  {_dot_quote(node.id)} [shape=box, label={_dot_quote(node.name or node.id)}];")
    for node in tree.nodes.values():
        for c in node.children:
            lines.append(f"  {_dot_quote(node.id)} -> {_dot_quote(c)};")
        if node.kind == RDEP:
            lines.append(f"  {_dot_quote(node.params.trigger)} -> {_dot_quote(node.id)} [style=dotted, arrowhead=empty];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def make_tree(nodes: Iterable[FmtNode], top: str, policy=NO_MAINTENANCE, costs=None, name="") -> FaultMaintenanceTree:
    """Convenience constructor used by tests and the decomposition code."""
    return FaultMaintenanceTree(
        nodes={n.id: n for n in nodes}, top=top, policy=policy, costs=costs or CostModel(), name=name
    )


def ebe(node_id, levels, mttf, phases=1, label="", maintained=True) -> FmtNode:
    return FmtNode(node_id, EBE, params=EbeParams(levels, float(mttf), phases, label, maintained))


def or_gate(node_id, *children, name="") -> FmtNode:
    return FmtNode(node_id, OR, children=tuple(children), name=name)


def rdep(node_id, trigger, dependents, gamma) -> FmtNode:
    deps = tuple(dependents)
    return FmtNode(node_id, RDEP, children=deps, params=RdepParams(float(gamma), trigger, deps))
