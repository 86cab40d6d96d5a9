"""
A first fault maintenance tree
==============================

Load a small bundled tree, look at its structure, compile it to a CTMC and
read off the four metrics.
"""

from fmtcheck.analysis import METRICS, evaluate
from fmtcheck.model import bundled_model, serialize, to_dot, validate
from fmtcheck.semantics import assemble_system

# toy_rdep: two EBEs under an OR, one of them wears faster once the other
# has degraded (an RDEP with gamma > 1)
tree = bundled_model("toy_rdep")
print(serialize(tree))
print("violations:", validate(tree) or "none")

# Graphviz source, pipe it to `dot -Tpng` to get a picture
print(to_dot(tree))

# every EBE, delay, timer and the repair/inspection modules become small
# chains; assemble_system wires them together and builds the product
sys = assemble_system(tree)
print(f"{sys.ctmc.n_states} states, {sys.ctmc.n_edges} transitions")
print(f"reliability chain (failed states merged): {sys.reliability_chain().n_states} states")

horizons = [0.5, 1.0, 2.0, 5.0]
values = evaluate(sys, METRICS, horizons)
print(f"\n{'T':>5} " + " ".join(f"{m:>18}" for m in METRICS))
for T in horizons:
    print(f"{T:>5g} " + " ".join(f"{values[(m, T)]:>18.6f}" for m in METRICS))
