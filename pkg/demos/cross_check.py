"""
Numerics against Monte Carlo
============================

The numeric route goes tree -> CTMC -> uniformization. The simulator in
``simulate_tree`` never builds a CTMC: it samples Erlang sojourns straight
from the tree and plays the maintenance policy out as discrete events. If the
two agree within a few standard errors the CTMC semantics is doing what the
tree says.
"""

import time

from fmtcheck.analysis import METRICS, evaluate
from fmtcheck.model import bundled_model, duplicate_rdep_inputs
from fmtcheck.semantics import assemble_system
from fmtcheck.simulate import SimConfig, cross_check, simulate_chain, simulate_tree

RUNS = 20_000
horizons = (1.0, 3.0)

for name in ["toy_or", "toy_rdep", "toy_inspect", "toy_overhaul", "toy_nomaint"]:
    tree = bundled_model(name)
    sys = assemble_system(duplicate_rdep_inputs(tree))
    num = evaluate(sys, METRICS, horizons)
    t0 = time.perf_counter()
    tree_est = simulate_tree(tree, SimConfig(runs=RUNS, horizon=horizons, seed=42))
    t1 = time.perf_counter()
    # the second route walks the CTMC itself, handy when debugging the wiring
    chain_est = simulate_chain(sys, SimConfig(runs=RUNS, horizon=horizons, seed=42))
    t2 = time.perf_counter()
    print(f"\n{name}: {sys.ctmc.n_states} states, DES {t1 - t0:.1f} s, chain walk {t2 - t1:.1f} s")
    for key in sorted(num):
        a = cross_check(num[key], tree_est[key])
        b = cross_check(num[key], chain_est[key])
        print(f"  {key[0]:>18} T={key[1]:g}  numeric {num[key]:10.5f}  "
              f"DES {tree_est[key].mean:10.5f} (z={a['z']:.2f})  chain {chain_est[key].mean:10.5f} (z={b['z']:.2f})")
