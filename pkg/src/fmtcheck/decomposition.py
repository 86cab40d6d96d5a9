"""Modular decomposition of an FMT and bottom-up abstraction.

Each independent sub-tree (module) below the top is analysed on its own with
the global maintenance policy, its failure probability ``D(T)`` at the query
horizon is turned into an MTTF, and in its parent the module is replaced by a
single non-maintained EBE with ``abstract_phase_count`` exponential levels.
The level rate is fitted so that the abstract node fails by ``T`` with
probability exactly ``D(T)``.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

from scipy.special import gammainc, gammaincinv

from . import analysis
from .analysis import DEFAULT, NumericsConfig, mttf_from_unreliability
from .ctmc import StateBudgetExceeded
from .model import EBE, EVENT, OR, EbeParams, FaultMaintenanceTree, FmtNode, duplicate_rdep_inputs
from .semantics import assemble_system


class DecompositionError(RuntimeError):
    pass


@dataclass
class SubGraph:
    id: str
    top: str
    nodes: list
    split_inputs: list = field(default_factory=list)

    def to_dict(self):
        return {"id": self.id, "top": self.top, "nodes": list(self.nodes), "split_inputs": list(self.split_inputs)}


@dataclass
class AbstractionPlan:
    subgraphs: list
    abstract_phase_count: int = 4
    horizon: float | None = None
    mttf_table: dict = field(default_factory=dict)

    @property
    def root(self) -> SubGraph:
        return self.subgraphs[-1]

    @property
    def is_monolithic(self) -> bool:
        return len(self.subgraphs) == 1

    def placeholder_of(self, module_top):
        return vg_id(module_top)

    def to_dict(self):
        return {
            "abstract_phase_count": self.abstract_phase_count,
            "horizon": self.horizon,
            "subgraphs": [g.to_dict() for g in self.subgraphs],
            "mttf_table": self.mttf_table,
        }


def vg_id(module_top):
    return f"Vg[{module_top}]"


def _process(tree, nid):
    node = tree.nodes[nid]
    return node.shadow_of or nid


def find_modules(tree: FaultMaintenanceTree) -> set:
    """Gate vertices that are modules, by depth-first visit times.

    A gate is a module when every vertex below it is first and last visited
    between the gate's own first and second visit. Shadow copies of RDEP
    triggers are identified with their original EBE, so an RDEP couples
    everything below it with wherever the trigger sits.
    """
    children = {}
    for nid, node in tree.nodes.items():
        if node.shadow_of is not None:
            continue
        children[nid] = [_process(tree, c) for c in node.children]
        if node.kind == "RDEP":
            children[nid].append(node.params.trigger)
    top = tree.top
    counter = 1
    first, second, last = {top: 1}, {}, {top: 1}
    finished = []
    stack = [(top, iter(children[top]))]
    while stack:
        v, it = stack[-1]
        c = next(it, None)
        if c is None:
            stack.pop()
            counter += 1
            second[v] = last[v] = counter
            finished.append(v)
            continue
        counter += 1
        if c in first:
            last[c] = counter
        else:
            first[c] = last[c] = counter
            stack.append((c, iter(children[c])))
    lo, hi = {}, {}
    for v in finished:
        a, b = float("inf"), float("-inf")
        for c in children[v]:
            a = min(a, first[c], lo[c])
            b = max(b, last[c], hi[c])
        lo[v], hi[v] = a, b
    return {v for v in finished if children[v] and first[v] < lo[v] and hi[v] < second[v]}


def _leaf_processes(tree, nid):
    out = set()
    for d in tree.descendants(nid):
        node = tree.nodes[d]
        if node.kind == EBE:
            out.add(node.shadow_of or d)
    return frozenset(out)


def find_and_split(tree: FaultMaintenanceTree, abstract_phase_count: int = 4) -> AbstractionPlan:
    """Identify splittable modules and order them bottom-up (root last)."""
    tree = duplicate_rdep_inputs(tree)
    modules = find_modules(tree)
    top_leaves = _leaf_processes(tree, tree.top)
    groups = {}
    for m in sorted(modules):
        if m == tree.top or tree.nodes[m].kind not in (OR, EVENT):
            continue
        leaves = _leaf_processes(tree, m)
        if len(leaves) >= 2 and leaves != top_leaves:
            groups.setdefault(leaves, []).append(m)
    cands = []
    for ms in groups.values():
        # same leaf set means nested gates; keep the highest one
        highest = [m for m in ms if all(o in tree.descendants(m) for o in ms)]
        cands.append(highest[0] if highest else ms[0])
    cands.sort()
    tops = cands + [tree.top]
    desc = {m: set(tree.descendants(m)) for m in tops}
    # nearest enclosing boundary of every module
    inner = {m: [c for c in cands if c != m and c in desc[m]] for m in tops}
    direct = {m: [c for c in inner[m] if not any(c in desc[o] for o in inner[m] if o != c)] for m in tops}

    graphs = {}
    for m in tops:
        hidden = set()
        for c in direct[m]:
            hidden |= desc[c]
        nodes = [n for n in tree.descendants(m) if n not in hidden]
        graphs[m] = SubGraph(id=m, top=m, nodes=nodes, split_inputs=[vg_id(c) for c in sorted(direct[m])])

    # reverse topological order of module tops (inner first), ties by id
    users = {m: [o for o in tops if m in direct[o]] for m in tops}
    indeg = {m: len(direct[m]) for m in tops}
    heap = [m for m in tops if indeg[m] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        m = heapq.heappop(heap)
        order.append(m)
        for u in users[m]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(heap, u)
    order.remove(tree.top)
    order.append(tree.top)
    return AbstractionPlan([graphs[m] for m in order], abstract_phase_count)


def fit_abstract_rate(D: float, T: float, k: int) -> float:
    """Rate ``lam`` with Erlang(k, lam) CDF at ``T`` equal to ``D``."""
    if not 0 < D < 1:
        raise DecompositionError(
            f"failure probability {D!r} at horizon {T!r} leaves the abstract rate undefined; "
            "use a horizon where the sub-tree can fail but is not certain to"
        )
    lam = float(gammaincinv(k, D)) / T
    if not lam > 0:
        raise DecompositionError(f"cannot fit abstract rate for D={D!r}")
    return lam


def erlang_cdf(t, k, lam) -> float:
    return float(gammainc(k, lam * t))


def abstract_params(D, T, k, label="") -> EbeParams:
    lam = fit_abstract_rate(D, T, k)
    return EbeParams(degradation_levels=k, mttf=k / lam, erlang_phases=1, label=label, maintained=False)


def subtree(tree: FaultMaintenanceTree, graph: SubGraph, abstract: dict) -> FaultMaintenanceTree:
    """The FMT of one sub-graph with its placeholders bound to abstract EBEs."""
    nodes = {}
    for nid in graph.nodes:
        node = tree.nodes[nid]
        if node.children:
            kids = []
            for c in node.children:
                kids.append(c if c in graph.nodes else vg_id(c))
            node = FmtNode(node.id, node.kind, tuple(kids), node.params, node.name, node.shadow_of)
        nodes[nid] = node
    for v in graph.split_inputs:
        nodes[v] = FmtNode(v, EBE, params=abstract[v])
    return FaultMaintenanceTree(nodes=nodes, top=graph.top, policy=tree.policy, costs=tree.costs,
                                name=f"{tree.name}:{graph.id}" if tree.name else graph.id)


@dataclass
class AbstractResult:
    values: dict
    plan: AbstractionPlan
    mttf_tables: dict
    states: dict
    seconds: float


def abstract_analyze(tree: FaultMaintenanceTree, metrics, horizons, cfg: NumericsConfig = DEFAULT,
                     abstract_phase_count: int = 4, plan: AbstractionPlan | None = None,
                     **assemble_kw) -> AbstractResult:
    """Evaluate ``metrics`` at every horizon on the abstracted tree.

    The MTTF table depends on the horizon, so lower sub-graphs are re-analysed
    per horizon. With a single-module plan this is the monolithic analysis.
    """
    t0 = time.perf_counter()
    tree = duplicate_rdep_inputs(tree)
    plan = plan or find_and_split(tree, abstract_phase_count)
    k = plan.abstract_phase_count
    metrics = list(metrics)
    values, tables, states = {}, {}, {}
    if plan.is_monolithic:
        sys = assemble_system(tree, **assemble_kw)
        values = analysis.evaluate(sys, metrics, horizons, cfg)
        states[tree.top] = _chain_sizes(sys, metrics)
        return AbstractResult(values, plan, {}, states, time.perf_counter() - t0)
    horizons = [float(T) for T in horizons]
    # sub-graphs without placeholders do not depend on the horizon: one pass each
    fixed = {}
    for g in plan.subgraphs[:-1]:
        if not g.split_inputs:
            sys = assemble_system(subtree(tree, g, {}), **assemble_kw)
            states.setdefault(g.id, {})["reliability"] = sys.reliability_chain().n_states
            pos = [T for T in horizons if T > 0]
            fixed[g.id] = analysis.evaluate(sys, ["reliability"], pos, cfg) if pos else {}
    for T in horizons:
        abstract = {}
        table = {}
        for g in plan.subgraphs[:-1]:
            if g.id in fixed:
                rel = fixed[g.id].get(("reliability", T))
            else:
                sys = assemble_system(subtree(tree, g, abstract), **assemble_kw)
                states.setdefault(g.id, {})["reliability"] = sys.reliability_chain().n_states
                rel = None if T == 0 else analysis.evaluate(sys, ["reliability"], [T], cfg)[("reliability", T)]
            if T == 0:
                # nothing can have failed yet; any placeholder rate gives the same answer
                params = EbeParams(k, 1.0, 1, f"abstract {g.id}", False)
                table[vg_id(g.id)] = {"module": g.id, "unreliability": 0.0, "mttf": None, "rate": None}
            else:
                D = 1.0 - rel
                params = abstract_params(D, T, k, f"abstract {g.id}")
                table[vg_id(g.id)] = {
                    "module": g.id,
                    "unreliability": D,
                    "mttf": mttf_from_unreliability(D, T),
                    "rate": k / params.mttf,
                }
            abstract[vg_id(g.id)] = params
        root = subtree(tree, plan.root, abstract)
        sys = assemble_system(root, **assemble_kw)
        res = analysis.evaluate(sys, metrics, [T], cfg)
        values.update(res)
        states[plan.root.id] = _chain_sizes(sys, metrics)
        tables[T] = table
    plan.mttf_table = {repr(T): tab for T, tab in tables.items()}
    return AbstractResult(values, plan, tables, states, time.perf_counter() - t0)


def _chain_sizes(sys, metrics):
    out = {}
    if "reliability" in metrics:
        out["reliability"] = sys.reliability_chain().n_states
    if any(m != "reliability" for m in metrics):
        out["full"] = sys.ctmc.n_states
    return out


def state_space_report(tree: FaultMaintenanceTree, state_budget: int | None = None,
                       abstract_phase_count: int = 4, **assemble_kw) -> dict:
    """Reliability-chain sizes of the monolithic and the abstracted model.

    ``abstract_states`` sums the chains of all sub-graphs. Placeholder rates
    do not change reachability, so the abstract side is built with unit rates.
    When the monolithic build exceeds ``state_budget`` the count is a lower
    bound and so is the reduction.
    """
    tree = duplicate_rdep_inputs(tree)
    plan = find_and_split(tree, abstract_phase_count)
    overflow = False
    try:
        mono = assemble_system(tree, state_budget=state_budget, **assemble_kw).reliability_chain().n_states
    except StateBudgetExceeded as exc:
        mono = exc.explored
        overflow = True
    per = {}
    if plan.is_monolithic:
        per[plan.root.id] = mono
    else:
        k = plan.abstract_phase_count
        dummy = {vg_id(g.id): EbeParams(k, float(k), 1, "", False) for g in plan.subgraphs[:-1]}
        for g in plan.subgraphs:
            sub = subtree(tree, g, dummy)
            per[g.id] = assemble_system(sub, **assemble_kw).reliability_chain().n_states
    abstract_states = sum(per.values())
    reduction = 100.0 * (1.0 - abstract_states / mono) if mono else 0.0
    return {
        "monolithic_states": mono,
        "monolithic_overflow": overflow,
        "abstract_states": abstract_states,
        "root_states": per[plan.root.id],
        "subgraph_states": per,
        "reduction_pct": reduction,
        "reduction_is_lower_bound": overflow,
    }
