import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmtcheck.analysis import METRICS, evaluate
from fmtcheck.ctmc import FULL, INTERLEAVE, Prop, elapsed_prop
from fmtcheck.model import (
    NO_MAINTENANCE,
    MaintenancePolicy,
    bundled_model,
    duplicate_rdep_inputs,
    ebe,
    make_tree,
    or_gate,
    rdep,
)
from fmtcheck.semantics import (
    MAINTENANCE,
    PERFORM_CLEAN,
    PERFORM_REPLACE,
    WIRING,
    apply_rdep,
    assemble_system,
    build_chain,
    build_degradation_delay,
    build_im,
    build_rm,
    build_timer,
    degrade_label,
    failed_prop,
    new_prop,
    thresh_predicate,
    thresh_prop,
    trig_predicate,
)

FULL_POLICY = MaintenancePolicy(t_rp=0.5, t_oh=2.0, t_in=0.25, t_cln=0.02, t_rpl=0.05, timer_phases=2)


def local_states(chain, sys, name):
    """Local state of component ``name`` in every state of a composed chain."""
    k = [c.name for c in sys.components].index(name)
    sizes = chain.component_sizes
    stride = int(np.prod(sizes[:k], dtype=np.int64))
    return (chain.codes // stride) % sizes[k]


def test_chain_structure():
    c = build_chain("e", ebe("e", 3, 6.0).params, FULL_POLICY)
    assert c.n_states == 4
    assert c.labels_of(0) == {new_prop("e")}
    assert c.labels_of(1) == c.labels_of(2) == {thresh_prop("e")}
    assert c.labels_of(3) == {failed_prop("e")}
    moves = {(s, lab, t) for s, lab, t, _, _ in c.edges()}
    assert (2, degrade_label("e"), 3) in moves
    assert (0, PERFORM_CLEAN, 0) in moves and (3, PERFORM_CLEAN, 2) in moves
    assert all((s, PERFORM_REPLACE, 0) in moves for s in range(4))
    assert set(c.rate.tolist()) == {1.0}


def test_chain_without_maintenance_has_no_repairs():
    c = build_chain("e", ebe("e", 3, 6.0).params, NO_MAINTENANCE)
    assert set(c.actions) == {degrade_label("e")}


def test_degradation_delay_variants():
    p2 = ebe("e", 2, 8.0, phases=2).params
    ext = build_degradation_delay("e", p2, FULL_POLICY)
    assert PERFORM_CLEAN in ext.actions and PERFORM_REPLACE in ext.actions
    plain = build_degradation_delay("e", p2, NO_MAINTENANCE)
    assert PERFORM_CLEAN not in plain.actions
    one = build_degradation_delay("e", ebe("e", 2, 4.0, phases=1).params, FULL_POLICY)
    assert PERFORM_CLEAN not in one.actions
    # level delay is mttf / levels, split over the phases
    assert sorted(set(ext.rate[np.isfinite(ext.rate) & (ext.rate != 1.0)].tolist())) == [2 / (8.0 / 2)]


def test_predicates():
    assert thresh_predicate(["a"]).holds({thresh_prop("a")})
    assert not thresh_predicate(["a"]).holds({failed_prop("a")})
    assert thresh_predicate(["a"], include_failed=True).holds({failed_prop("a")})
    assert trig_predicate(["a", "b"]).holds({failed_prop("b")})
    assert not trig_predicate(["a", "b"]).holds({new_prop("a"), new_prop("b")})


def test_rm_and_im_guards():
    rm = build_rm(FULL_POLICY, trig_predicate(["a"]), thresh_predicate(["a"]))
    assert rm.labels_of(1) == {MAINTENANCE}
    g = {lab: g for _, lab, _, _, g in rm.edges() if g is not None}
    assert g["trigger_replace"].holds({elapsed_prop("Toh"), thresh_prop("a")})
    assert not g["trigger_replace"].holds({elapsed_prop("Toh")})
    assert g["trigger_clean"].holds({elapsed_prop("Tin"), thresh_prop("a")})
    assert not g["trigger_clean"].holds({elapsed_prop("Tin"), failed_prop("a")})
    im = build_im(FULL_POLICY, thresh_predicate(["a"]))
    found = [g for s, lab, t, _, g in im.edges() if (s, t) == (0, 1)][0]
    assert found.holds({thresh_prop("a")}) and not found.holds({thresh_prop("a"), MAINTENANCE})


def test_timer_restart_guard():
    t = build_timer("Trp", 1.0, 2, "check_clean", "trigger_clean", trig_predicate(["a"]), ["trigger_clean"])
    elapsed = 3
    restart = [g for s, lab, _, _, g in t.edges() if s == elapsed and lab.startswith("restart")][0]
    assert restart.holds(set())
    assert not restart.holds({failed_prop("a")})
    assert restart.holds({failed_prop("a"), MAINTENANCE})
    own = [d for s, lab, d, _, _ in t.edges() if s == elapsed and lab == "trigger_clean"]
    assert own == [1]


def test_rdep_identity_returns_same_delay():
    d = build_degradation_delay("b", ebe("b", 2, 4.0, phases=2).params, FULL_POLICY)
    assert apply_rdep(d, "a", 1.0, {degrade_label("b")}) is d
    fast = apply_rdep(d, "a", 3.0, {degrade_label("b"), "tick[Td[b]]"})
    assert fast.n_edges == d.n_edges + 2
    assert max(fast.rate[np.isfinite(fast.rate)]) == pytest.approx(3 * max(d.rate[np.isfinite(d.rate)]))


def wiring_tree(policy=FULL_POLICY):
    nodes = [or_gate("top", "a", "r"), rdep("r", "a", ["b"], 2.0), ebe("a", 2, 3.0, phases=2), ebe("b", 2, 4.0, phases=2)]
    return duplicate_rdep_inputs(make_tree(nodes, "top", policy=policy))


def test_wiring_audit():
    sys = assemble_system(wiring_tree())
    used = {(role, lab) for role, lab, mode in sys.wiring() if mode == FULL}
    expected = {(role, lab) for lab, roles in WIRING.items() for role in roles}
    # every fully synchronised (role, label) pair is a declared one and vice versa
    assert used == expected
    for role, lab, mode in sys.wiring():
        if mode == INTERLEAVE:
            assert lab.startswith(("tick", "restart"))
    assert sys.lint() == []


def independent_tree(levels, policy=NO_MAINTENANCE, phases=1):
    leaves = [ebe(f"e{i}", n, 2.0 + i, phases=phases) for i, n in enumerate(levels)]
    top = or_gate("top", *[e.id for e in leaves]) if len(leaves) > 1 else None
    nodes = ([top] if top else []) + leaves
    return make_tree(nodes, "top" if top else leaves[0].id, policy=policy)


@pytest.mark.parametrize("levels", [(1, 1), (2, 3), (3, 1, 2), (4, 2, 2, 1)])
def test_state_count_oracle(levels):
    # without maintenance and with single-phase delays the tangible states are
    # exactly the products of EBE levels
    sys = assemble_system(independent_tree(levels))
    assert sys.ctmc.n_states == math.prod(n + 1 for n in levels)
    assert sys.reliability_chain().n_states == math.prod(levels) + 1


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=1, max_size=3), st.integers(1, 2), st.booleans())
def test_monotone_without_repairs(levels, phases, with_rdep):
    tree = independent_tree(levels, phases=phases)
    if with_rdep and len(levels) >= 2:
        nodes = list(tree.nodes.values())
        nodes[0] = or_gate("top", *[f"e{i}" for i in range(len(levels)) if i != 1], "r")
        nodes.append(rdep("r", "e0", ["e1"], 2.5))
        tree = duplicate_rdep_inputs(make_tree(nodes, "top"))
    sys = assemble_system(tree)
    c = sys.ctmc
    for i in range(len(levels)):
        lvl = local_states(c, sys, f"e{i}")
        assert (lvl[c.dst] >= lvl[c.src]).all()


@pytest.mark.parametrize("name", ["toy_rdep", "toy_overhaul"])
def test_single_maintenance_action(name):
    tree = duplicate_rdep_inputs(bundled_model(name))
    sys = assemble_system(tree)
    c = sys.ctmc
    N = tree.policy.repair_delay_phases
    cln = local_states(c, sys, "Tcln")
    rpl = local_states(c, sys, "Trpl")
    rm = local_states(c, sys, "RM")
    cln_on = (cln >= 1) & (cln <= N)
    rpl_on = (rpl >= 1) & (rpl <= N)
    assert not (cln_on & rpl_on).any()
    assert ((cln_on | rpl_on) == (rm == 1)).all()
    assert cln_on.any() and rpl_on.any()


def test_gamma_one_rdep_is_identity():
    pol = MaintenancePolicy(t_rp=1.0, t_cln=0.02, timer_phases=2)
    a, b = ebe("a", 2, 3.0), ebe("b", 3, 5.0, phases=2)
    plain = make_tree([or_gate("top", "a", "b"), a, b], "top", policy=pol)
    with_r = duplicate_rdep_inputs(make_tree([or_gate("top", "a", "r"), rdep("r", "a", ["b"], 1.0), a, b], "top", policy=pol))
    v1 = evaluate(assemble_system(plain), METRICS, [1.0, 4.0])
    v2 = evaluate(assemble_system(with_r), METRICS, [1.0, 4.0])
    for k in v1:
        assert v2[k] == pytest.approx(v1[k], abs=1e-10)
    fast = duplicate_rdep_inputs(make_tree([or_gate("top", "a", "r"), rdep("r", "a", ["b"], 4.0), a, b], "top", policy=pol))
    # a failed trigger already fails the top, so only measures after repair see the speed-up
    v3 = evaluate(assemble_system(fast), METRICS, [4.0])
    assert v3[("reliability", 4.0)] == pytest.approx(v1[("reliability", 4.0)], abs=1e-10)
    assert v3[("availability", 4.0)] < v1[("availability", 4.0)]
    assert v3[("expected_failures", 4.0)] > v1[("expected_failures", 4.0)]


def test_failure_counter_fires_once_per_failure():
    # with no repair the system fails at most once
    sys = assemble_system(independent_tree((2, 3)))
    v = evaluate(sys, ["reliability", "expected_failures"], [0.5, 2.0, 8.0])
    for T in (0.5, 2.0, 8.0):
        assert v[("expected_failures", T)] == pytest.approx(1 - v[("reliability", T)], abs=1e-8)
    # the lump reward is only earned on up -> down edges
    c = sys.ctmc
    fail = sys.failed_mask(c)
    assert sys.failure_counter.rate_vector(c)[fail].sum() == 0


def test_failure_counter_with_repairs_exceeds_unreliability():
    sys = assemble_system(duplicate_rdep_inputs(bundled_model("toy_overhaul")))
    v = evaluate(sys, ["reliability", "expected_failures"], [3.0])
    assert v[("expected_failures", 3.0)] > 1 - v[("reliability", 3.0)]


def test_reliability_chain_has_single_sink():
    sys = assemble_system(duplicate_rdep_inputs(bundled_model("toy_rdep")))
    rel = sys.reliability_chain()
    sink = sys.failed_mask(rel)
    assert sink.sum() == 1
    assert rel.absorbed_sink == int(np.flatnonzero(sink)[0])
    assert not (rel.src == rel.absorbed_sink).any()


def test_inspection_finds_failed_only_when_asked():
    tree = bundled_model("toy_inspect")
    lit = evaluate(assemble_system(tree), ["availability"], [3.0])
    wide = evaluate(assemble_system(tree, inspect_failed=True), ["availability"], [3.0])
    assert wide[("availability", 3.0)] > lit[("availability", 3.0)]


def test_state_budget():
    from fmtcheck.ctmc import StateBudgetExceeded

    sys = assemble_system(duplicate_rdep_inputs(bundled_model("toy_overhaul")), state_budget=50)
    with pytest.raises(StateBudgetExceeded):
        sys.ctmc
