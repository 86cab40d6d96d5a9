"""CTMC semantics of FMT elements and the wiring of a whole tree.

Every EBE becomes a degradation chain ``s0..sN`` driven by an (extended)
Erlang DELAY ``Td``. Maintenance is global: one repair module (RM), one
inspection module (IM), the periodic timers ``Trp`` (cleaning), ``Toh``
(overhaul/replacement) and ``Tin`` (inspection), and the one-shot duration
delays ``Tcln``/``Trpl``. All of them talk through shared labels; the table
:data:`WIRING` lists who takes part in what.

Timers hold in their ``elapsed`` state for an instant: if the RM accepts
the request (guard true) the ``trigger_clean``/``trigger_replace`` action
fires, otherwise the timer restarts. Both happen immediately and are
eliminated by :func:`~fmtcheck.ctmc.compose_system`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .ctmc import (
    FULL,
    INF,
    INTERLEAVE,
    AnyOf,
    Ctmc,
    Guard,
    Not,
    TRUE,
    Prop,
    RewardStructure,
    SyncRule,
    compose_system,
    elapsed_prop,
    erlang_delay,
    erlang_delay_ext,
    lint_rate_carriers,
    tick_label,
)
from .model import EBE, EbeParams, FaultMaintenanceTree, MaintenancePolicy

TRIGGER = "trigger"
CHECK_CLEAN = "check_clean"
CHECK_REPLACE = "check_replace"
INSPECT = "inspect"
TRIGGER_CLEAN = "trigger_clean"
TRIGGER_REPLACE = "trigger_replace"
PERFORM_CLEAN = "perform_clean"
PERFORM_REPLACE = "perform_replace"
MAINTENANCE = "maintenance"

# label -> component roles synchronising on it (all fully synchronised)
WIRING = {
    TRIGGER: ("Td", "Trp", "Toh", "Tin"),
    "degrade": ("EBE", "Td"),
    CHECK_CLEAN: ("Trp", "RM"),
    CHECK_REPLACE: ("Toh", "RM"),
    INSPECT: ("Tin", "IM", "RM"),
    TRIGGER_CLEAN: ("RM", "Tcln", "Trp", "Toh", "Tin"),
    TRIGGER_REPLACE: ("RM", "Trpl", "Trp", "Toh", "Tin"),
    PERFORM_CLEAN: ("EBE", "Td", "RM", "IM", "Tcln"),
    PERFORM_REPLACE: ("EBE", "Td", "RM", "IM", "Trpl"),
}


def degrade_label(eid):
    return f"degrade[{eid}]"


def new_prop(eid):
    return f"{eid}.new"


def thresh_prop(eid):
    return f"{eid}.thresh"


def failed_prop(eid):
    return f"{eid}.failed"


def _base_label(label):
    return label.split("[", 1)[0]


# --------------------------------------------------------------------------
# Predicates


def thresh_predicate(ebe_ids, include_failed=False) -> Guard:
    """Some EBE sits at an intermediate degradation level.

    Literal reading: a failed EBE does not raise ``thresh``; with
    ``include_failed`` it does.
    """
    names = [thresh_prop(e) for e in ebe_ids]
    if include_failed:
        names += [failed_prop(e) for e in ebe_ids]
    return AnyOf(names).named("thresh")


def trig_predicate(ebe_ids) -> Guard:
    """Some EBE is not new (each EBE state is exactly one of new/thresh/failed)."""
    names = [thresh_prop(e) for e in ebe_ids] + [failed_prop(e) for e in ebe_ids]
    return AnyOf(names).named("trig")


def or_failure_predicate(tree: FaultMaintenanceTree, node_id=None) -> Guard:
    """FAIL of a gate: true iff some EBE feeding it has failed."""
    return AnyOf(failed_prop(e) for e in tree.failure_leaves(node_id)).named("FAIL")


def input_predicate(trigger_id) -> Guard:
    return Prop(failed_prop(trigger_id)).named("input")


# --------------------------------------------------------------------------
# Element builders


@dataclass
class EbeBundle:
    id: str
    chain: Ctmc
    degradation: Ctmc
    clean_delay: Ctmc | None = None
    replace_delay: Ctmc | None = None


def build_chain(eid, params: EbeParams, policy: MaintenancePolicy) -> Ctmc:
    """The N+1 state chain of an EBE; every local rate is 1."""
    N = params.degradation_levels
    deg = degrade_label(eid)
    edges = [(i, deg, i + 1, 1.0) for i in range(N)]
    if params.maintained and policy.cleans:
        edges.append((0, PERFORM_CLEAN, 0, 1.0))
        edges += [(i, PERFORM_CLEAN, i - 1, 1.0) for i in range(1, N + 1)]
    if params.maintained and policy.replaces:
        edges += [(i, PERFORM_REPLACE, 0, 1.0) for i in range(N + 1)]
    labeling = {0: {new_prop(eid)}, N: {failed_prop(eid)}}
    for i in range(1, N):
        labeling[i] = {thresh_prop(eid)}
    props = [new_prop(eid), thresh_prop(eid), failed_prop(eid)]
    names = [f"{eid}:s{i}" for i in range(N + 1)]
    return Ctmc.from_edges(N + 1, edges, labeling, props=props, state_names=names)


def _repair_labels(policy):
    out = []
    if policy.cleans:
        out.append(PERFORM_CLEAN)
    if policy.replaces:
        out.append(PERFORM_REPLACE)
    return out


def _add_idle(c: Ctmc, labels) -> Ctmc:
    edges = list(c.edges())
    for lab in labels:
        have = {e[0] for e in edges if e[1] == lab}
        edges += [(s, lab, s, 1.0, None) for s in range(c.n_states) if s not in have]
    return c.replace_edges(edges)


def build_degradation_delay(eid, params: EbeParams, policy: MaintenancePolicy, *, mu=INF) -> Ctmc:
    """``Td``: per-level delay with resets on clean/replace when there is anything to reset."""
    resets = _repair_labels(policy) if params.maintained else []
    T = params.level_delay
    n = params.erlang_phases
    if resets and n >= 2:
        d = erlang_delay_ext(T, n, TRIGGER, degrade_label(eid), resets, name=f"Td[{eid}]", mu=mu)
        return _add_idle(d, resets)
    return erlang_delay(T, n, TRIGGER, degrade_label(eid), name=f"Td[{eid}]", mu=mu)


def build_clean_delay(policy: MaintenancePolicy, *, mu=INF) -> Ctmc:
    return erlang_delay(policy.t_cln, policy.repair_delay_phases, TRIGGER_CLEAN, PERFORM_CLEAN,
                        name="Tcln", mu=mu, cyclic=False)


def build_replace_delay(policy: MaintenancePolicy, *, mu=INF) -> Ctmc:
    return erlang_delay(policy.t_rpl, policy.repair_delay_phases, TRIGGER_REPLACE, PERFORM_REPLACE,
                        name="Trpl", mu=mu, cyclic=False)


def build_ebe(eid, params: EbeParams, policy: MaintenancePolicy, *, mu=INF) -> EbeBundle:
    """Chain, degradation delay and the clean/replace delays for one EBE.

    The clean/replace delays are identical for every EBE; :func:`assemble_system`
    instantiates them once per system since all EBEs are repaired together.
    """
    return EbeBundle(
        eid,
        build_chain(eid, params, policy),
        build_degradation_delay(eid, params, policy, mu=mu),
        build_clean_delay(policy, mu=mu) if params.maintained and policy.cleans else None,
        build_replace_delay(policy, mu=mu) if params.maintained and policy.replaces else None,
    )


def build_timer(name, T, phases, move_label, own_trigger, request: Guard, trigger_labels, *, mu=1.0) -> Ctmc:
    """Periodic timer that holds at ``elapsed`` while its request is pending.

    ``request`` is the condition under which the RM takes the request; the
    immediate restart is guarded by its negation, the ``own_trigger`` edge
    out of ``elapsed`` restarts the timer when the RM accepts.
    """
    maint = Prop(MAINTENANCE)
    pending = request & Not(maint)
    d = erlang_delay(T, phases, TRIGGER, move_label, name=name, mu=mu, restart_guard=Not(pending))
    N = phases
    edges = list(d.edges())
    for lab in trigger_labels:
        for s in range(N + 2):
            if lab == own_trigger and s == N + 1:
                edges.append((s, lab, 1, 1.0, None))
            else:
                edges.append((s, lab, s, 1.0, None))
    return d.replace_edges(edges)


def build_rm(policy: MaintenancePolicy, trig: Guard | None = None, thresh: Guard | None = None) -> Ctmc:
    """Repair module: ``rm0`` idle, ``rm1`` (labelled maintenance) while a repair runs."""
    if not policy.has_maintenance:
        return Ctmc.from_edges(1, [], {0: set()}, state_names=["rm0"])
    trig = trig if trig is not None else AnyOf(())
    thresh = thresh if thresh is not None else AnyOf(())
    edges = []
    for lab, present in ((CHECK_CLEAN, policy.t_rp), (CHECK_REPLACE, policy.t_oh), (INSPECT, policy.t_in)):
        if present is not None:
            edges += [(0, lab, 0, 1.0), (1, lab, 1, 1.0)]
    if policy.cleans:
        reasons = []
        if policy.t_rp is not None:
            reasons.append(Prop(elapsed_prop("Trp")) & trig)
        if policy.t_in is not None:
            reasons.append(Prop(elapsed_prop("Tin")) & thresh)
        g = reasons[0] if len(reasons) == 1 else reasons[0] | reasons[1]
        edges.append((0, TRIGGER_CLEAN, 1, 1.0, g))
        edges.append((1, PERFORM_CLEAN, 0, 1.0))
    if policy.replaces:
        edges.append((0, TRIGGER_REPLACE, 1, 1.0, Prop(elapsed_prop("Toh")) & trig))
        edges.append((1, PERFORM_REPLACE, 0, 1.0))
    return Ctmc.from_edges(2, edges, {1: {MAINTENANCE}}, props=[MAINTENANCE], state_names=["rm0", "rm1"])


def build_im(policy: MaintenancePolicy, thresh: Guard | None = None) -> Ctmc:
    """Inspection module: ``im0 -> im1`` on an inspection that finds degradation."""
    if policy.t_in is None:
        return Ctmc.from_edges(1, [], {0: set()}, state_names=["im0"])
    thresh = thresh if thresh is not None else AnyOf(())
    found = thresh & Not(Prop(MAINTENANCE))
    edges = [
        (0, INSPECT, 1, 1.0, found),
        (0, INSPECT, 0, 1.0, Not(found)),
        (1, INSPECT, 1, 1.0),
    ]
    for lab in _repair_labels(policy):
        edges += [(1, lab, 0, 1.0), (0, lab, 0, 1.0)]
    return Ctmc.from_edges(2, edges, {}, state_names=["im0", "im1"])


def apply_rdep(delay: Ctmc, trigger_id, gamma, phase_labels) -> Ctmc:
    """Speed up the phase edges of ``delay`` by ``gamma`` while the trigger EBE is failed.

    Each phase edge is split into a variant guarded by ``not input`` (old
    rate) and one guarded by ``input`` (rate times ``gamma``).
    """
    if gamma == 1:
        return delay
    on = input_predicate(trigger_id)
    off = Not(on)
    edges = []
    for s, lab, t, r, g in delay.edges():
        if lab in phase_labels and t == s + 1 and s >= 1:
            edges.append((s, lab, t, r, off if g is None else g & off))
            edges.append((s, lab, t, r * gamma, on if g is None else g & on))
        else:
            edges.append((s, lab, t, r, g))
    return delay.replace_edges(edges)


# --------------------------------------------------------------------------
# System assembly


@dataclass
class Component:
    role: str
    name: str
    ctmc: Ctmc


@dataclass
class SystemBundle:
    """All components of a tree plus sync rules, top-event predicate and rewards.

    The composed chains are built lazily: :attr:`ctmc` is the full system,
    :meth:`reliability_chain` the smaller chain in which failed states are
    merged into one absorbing sink.
    """

    tree: FaultMaintenanceTree
    components: list
    rules: tuple
    failed_predicate: Guard
    rewards: RewardStructure
    failure_counter: RewardStructure
    state_budget: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def _compose(self, absorb=None):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return compose_system([c.ctmc for c in self.components], self.rules, absorb=absorb,
                                  observed=self.failed_predicate.props(), state_budget=self.state_budget)

    @property
    def ctmc(self) -> Ctmc:
        if "full" not in self._cache:
            self._cache["full"] = self._compose()
        return self._cache["full"]

    def reliability_chain(self) -> Ctmc:
        if "rel" not in self._cache:
            self._cache["rel"] = self._compose(absorb=self.failed_predicate)
        return self._cache["rel"]

    def failed_mask(self, chain: Ctmc | None = None) -> np.ndarray:
        chain = chain if chain is not None else self.ctmc
        return chain.satisfying(self.failed_predicate)

    def component(self, name) -> Component:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def wiring(self):
        """(role, label, mode) for every synchronising label a component uses."""
        modes = dict((r.label, r.mode) for r in self.rules)
        out = set()
        for c in self.components:
            for a in c.ctmc.actions:
                out.add((c.role, _base_label(a), modes.get(a, INTERLEAVE)))
        return sorted(out)

    def lint(self):
        return lint_rate_carriers([c.ctmc for c in self.components], self.rules)


def assemble_system(tree: FaultMaintenanceTree, *, mu=INF, inspect_failed=False, include_abstract=False,
                    state_budget=None) -> SystemBundle:
    """Instantiate and wire every component of ``tree``.

    ``mu`` is the rate of the trigger transitions (``inf``: immediate).
    ``inspect_failed`` lets an inspection that finds a failed EBE request a
    repair; ``include_abstract`` lets non-maintained EBEs count for
    thresh/trig.
    """
    policy = tree.policy
    processes = [n for n in tree.ebes() if n.shadow_of is None]
    maintained = [n.id for n in processes if n.params.maintained or include_abstract]
    thresh = thresh_predicate(maintained, inspect_failed)
    trig = trig_predicate(maintained)

    comps: list[Component] = []
    first_trigger = [True]

    def trig_mu():
        if first_trigger[0]:
            first_trigger[0] = False
            return mu
        return 1.0

    rdeps_on = {}
    for r in tree.rdeps():
        for child in r.params.children:
            rdeps_on.setdefault(child, []).append(r)

    for node in processes:
        p = node.params
        chain = build_chain(node.id, p, policy)
        td = build_degradation_delay(node.id, p, policy, mu=trig_mu())
        for r in rdeps_on.get(node.id, ()):
            td = apply_rdep(td, r.params.trigger, r.params.gamma,
                            {degrade_label(node.id), tick_label(f"Td[{node.id}]")})
        comps.append(Component("EBE", node.id, chain))
        comps.append(Component("Td", f"Td[{node.id}]", td))

    triggers = []
    if policy.cleans:
        triggers.append(TRIGGER_CLEAN)
    if policy.replaces:
        triggers.append(TRIGGER_REPLACE)
    k = policy.timer_phases
    if policy.t_rp is not None:
        comps.append(Component("Trp", "Trp", build_timer("Trp", policy.t_rp, k, CHECK_CLEAN, TRIGGER_CLEAN, trig,
                                                           triggers, mu=trig_mu())))
    if policy.t_oh is not None:
        comps.append(Component("Toh", "Toh", build_timer("Toh", policy.t_oh, k, CHECK_REPLACE, TRIGGER_REPLACE, trig,
                                                           triggers, mu=trig_mu())))
    if policy.t_in is not None:
        comps.append(Component("Tin", "Tin", build_timer("Tin", policy.t_in, k, INSPECT, TRIGGER_CLEAN, thresh,
                                                           triggers, mu=trig_mu())))
    if policy.has_maintenance:
        comps.append(Component("RM", "RM", build_rm(policy, trig, thresh)))
    if policy.t_in is not None:
        comps.append(Component("IM", "IM", build_im(policy, thresh)))
    if policy.cleans:
        comps.append(Component("Tcln", "Tcln", build_clean_delay(policy, mu=mu)))
    if policy.replaces:
        comps.append(Component("Trpl", "Trpl", build_replace_delay(policy, mu=mu)))

    # a label is fully synchronised when at least two components share it
    count: dict[str, int] = {}
    for c in comps:
        for a in c.ctmc.actions:
            count[a] = count.get(a, 0) + 1
    rules = []
    for a in sorted(count):
        wired = _base_label(a) in WIRING
        rules.append(SyncRule(a, FULL if wired and count[a] >= 2 else INTERLEAVE))

    fail = or_failure_predicate(tree)
    c = tree.costs
    rewards = RewardStructure(
        state_rewards=((TRUE, c.operational_rate), (fail, c.failure_rate)),
        transition_rewards=((INSPECT, c.inspect_cost), (PERFORM_CLEAN, c.clean_cost), (PERFORM_REPLACE, c.replace_cost)),
    )
    counter = RewardStructure(entering=((fail, 1.0),))
    return SystemBundle(tree, comps, tuple(rules), fail, rewards, counter, state_budget=state_budget)

