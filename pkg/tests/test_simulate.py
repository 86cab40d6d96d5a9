import math

import pytest

from fmtcheck.analysis import METRICS, evaluate
from fmtcheck.model import CostModel, MaintenancePolicy, bundled_model, ebe, make_tree, or_gate
from fmtcheck.semantics import assemble_system
from fmtcheck.simulate import (
    DETERMINISTIC,
    Estimate,
    SimConfig,
    cross_check,
    simulate,
    simulate_chain,
    simulate_tree,
)


def single(mttf=2.0):
    return make_tree([ebe("a", 1, mttf)], "a")


def test_config_checks():
    with pytest.raises(ValueError):
        SimConfig(runs=0)
    with pytest.raises(ValueError):
        SimConfig(runs=10, delay_mode="exact")
    with pytest.raises(ValueError):
        SimConfig(runs=10, horizon=-1.0).horizons
    assert SimConfig(runs=1, horizon=(1, 2)).horizons == [1.0, 2.0]


def test_same_seed_same_numbers():
    t = bundled_model("toy_or")
    cfg = SimConfig(runs=500, horizon=(1.0, 2.0), seed=7)
    a, b = simulate_tree(t, cfg), simulate_tree(t, cfg)
    assert a.values == b.values
    c = simulate_tree(t, SimConfig(runs=500, horizon=(1.0, 2.0), seed=8))
    assert c.values != a.values
    sys = assemble_system(t)
    assert simulate_chain(sys, cfg).values == simulate_chain(sys, cfg).values


@pytest.mark.parametrize("engine", ["tree", "chain"])
def test_exponential_leaf(engine):
    t = single(2.0)
    cfg = SimConfig(runs=20_000, horizon=(1.0, 3.0), seed=3)
    est = simulate_tree(t, cfg) if engine == "tree" else simulate_chain(assemble_system(t), cfg)
    for T in (1.0, 3.0):
        r = math.exp(-T / 2.0)
        assert cross_check(r, est[("reliability", T)])["pass"]
        # unrepaired: one failure at most
        assert est[("expected_failures", T)].mean == pytest.approx(1 - est[("reliability", T)].mean)
        avail = 2.0 * (1 - r) / T
        assert cross_check(avail, est[("availability", T)])["pass"]


@pytest.mark.parametrize("name", ["toy_or", "toy_inspect"])
def test_both_routes_agree_with_numeric(name):
    t = bundled_model(name)
    sys = assemble_system(t)
    num = evaluate(sys, METRICS, [2.0])
    cfg = SimConfig(runs=8000, horizon=2.0, seed=11)
    for est in (simulate_tree(t, cfg), simulate_chain(sys, cfg)):
        for key, x in num.items():
            assert cross_check(x, est[key])["z"] < 4, (key, x, est[key])


def test_deterministic_timers_are_exact():
    # before the period ends an exact timer cannot have fired; an Erlang one can
    pol = MaintenancePolicy(t_rp=1.0, t_cln=0.01, timer_phases=1)
    t = make_tree([or_gate("top", "a", "b"), ebe("a", 2, 1.8), ebe("b", 1, 50.0)], "top",
                  policy=pol, costs=CostModel(clean_cost=1.0))
    pt = simulate_tree(t, SimConfig(runs=4000, horizon=0.9, seed=5))
    det = simulate_tree(t, SimConfig(runs=4000, horizon=0.9, seed=5, delay_mode=DETERMINISTIC))
    assert det[("expected_cost", 0.9)].mean == 0.0
    assert pt[("expected_cost", 0.9)].mean > 0.1
    with pytest.raises(ValueError):
        simulate(assemble_system(t), SimConfig(runs=10, delay_mode=DETERMINISTIC))


def test_dispatch():
    t = single()
    cfg = SimConfig(runs=100, horizon=1.0)
    assert simulate(t, cfg).meta["engine"] == "tree"
    assert simulate(assemble_system(t), cfg).meta["engine"] == "chain"


def test_cross_check():
    est = Estimate(0.5, 0.01, 100)
    assert cross_check(0.52, est)["z"] == pytest.approx(2.0)
    assert not cross_check(0.54, est)["pass"]
    exact = Estimate(1.0, 0.0, 100)
    assert cross_check(1.0, exact)["pass"]
    assert cross_check(0.9, exact)["z"] == math.inf
    lo, hi = est.ci
    assert lo < 0.5 < hi


def test_zero_horizon_is_initial_state():
    est = simulate_tree(bundled_model("toy_or"), SimConfig(runs=50, horizon=(0.0, 1.0)))
    assert est[("reliability", 0.0)].mean == 1.0
    assert est[("expected_cost", 0.0)].mean == 0.0
