"""Labelled CTMCs, Erlang DELAY fragments and parallel composition.

Transitions are stored as parallel arrays ``(src, label, dst, rate)``; several
edges between the same pair of states are kept apart when their labels differ.
A rate of ``inf`` marks an immediate transition (the limit of an arbitrarily
fast trigger); :func:`compose_system` eliminates those so that analysed
chains only contain finite rates.

Component chains may carry guards on their edges. A guard is a boolean
expression over atomic propositions of the *composed* state; it is resolved
when the final product is built.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import product as iproduct
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

INF = math.inf
FULL = "full"
INTERLEAVE = "interleave"


class CompositionError(RuntimeError):
    pass


class StateBudgetExceeded(CompositionError):
    def __init__(self, budget, explored):
        self.budget = budget
        self.explored = explored
        super().__init__(f"state budget {budget} exceeded ({explored} states explored)")


# --------------------------------------------------------------------------
# Guards


class Guard:
    """Boolean expression over atomic propositions."""

    name = ""

    def __and__(self, other):
        return All((self, other))

    def __or__(self, other):
        return AnyG((self, other))

    def __invert__(self):
        return Not(self)

    def named(self, name):
        return Named(name, self)

    def holds(self, props) -> bool:
        raise NotImplementedError

    def props(self) -> frozenset:
        raise NotImplementedError

    def compile(self, bits: Mapping[str, int], words: int) -> Callable[[np.ndarray], np.ndarray]:
        """Return ``f(masks) -> bool array`` for a (n, words) uint64 mask array."""
        raise NotImplementedError

    def __call__(self, props) -> bool:
        return self.holds(props)


def _word_masks(names, bits, words):
    m = np.zeros(words, dtype=np.uint64)
    for n in names:
        b = bits.get(n)
        if b is not None:
            m[b // 64] |= np.uint64(1) << np.uint64(b % 64)
    return m


class AnyOf(Guard):
    """True when at least one of ``names`` holds (false for an empty set)."""

    def __init__(self, names):
        self.names = tuple(sorted(set(names)))

    def holds(self, props):
        return any(n in props for n in self.names)

    def props(self):
        return frozenset(self.names)

    def compile(self, bits, words):
        wm = _word_masks(self.names, bits, words)
        if not wm.any():
            return lambda M: np.zeros(M.shape[0], dtype=bool)
        nz = np.nonzero(wm)[0]
        if len(nz) == 1:
            w, m = int(nz[0]), wm[nz[0]]
            return lambda M: (M[:, w] & m) != 0
        return lambda M: ((M & wm) != 0).any(axis=1)

    def __repr__(self):
        return f"AnyOf({list(self.names)})"

    def __eq__(self, other):
        return type(other) is AnyOf and other.names == self.names

    def __hash__(self):
        return hash(("AnyOf", self.names))


def Prop(name) -> AnyOf:
    return AnyOf((name,))


class _Const(Guard):
    def __init__(self, value):
        self.value = bool(value)

    def holds(self, props):
        return self.value

    def props(self):
        return frozenset()

    def compile(self, bits, words):
        v = self.value
        return lambda M: np.full(M.shape[0], v, dtype=bool)

    def __repr__(self):
        return "TRUE" if self.value else "FALSE"


TRUE = _Const(True)
FALSE = _Const(False)


class Not(Guard):
    def __init__(self, inner):
        self.inner = inner

    def holds(self, props):
        return not self.inner.holds(props)

    def props(self):
        return self.inner.props()

    def compile(self, bits, words):
        f = self.inner.compile(bits, words)
        return lambda M: ~f(M)

    def __repr__(self):
        return f"~{self.inner!r}"


class All(Guard):
    def __init__(self, parts):
        flat = []
        for p in parts:
            flat.extend(p.parts if isinstance(p, All) else [p])
        self.parts = tuple(flat)

    def holds(self, props):
        return all(p.holds(props) for p in self.parts)

    def props(self):
        return frozenset().union(*(p.props() for p in self.parts))

    def compile(self, bits, words):
        fs = [p.compile(bits, words) for p in self.parts]

        def f(M):
            out = fs[0](M)
            for g in fs[1:]:
                out = out & g(M)
            return out

        return f

    def __repr__(self):
        return "(" + " & ".join(map(repr, self.parts)) + ")"


class AnyG(Guard):
    def __init__(self, parts):
        flat = []
        for p in parts:
            flat.extend(p.parts if isinstance(p, AnyG) else [p])
        self.parts = tuple(flat)

    def holds(self, props):
        return any(p.holds(props) for p in self.parts)

    def props(self):
        return frozenset().union(*(p.props() for p in self.parts))

    def compile(self, bits, words):
        fs = [p.compile(bits, words) for p in self.parts]

        def f(M):
            out = fs[0](M)
            for g in fs[1:]:
                out = out | g(M)
            return out

        return f

    def __repr__(self):
        return "(" + " | ".join(map(repr, self.parts)) + ")"


class Named(Guard):
    """A guard with a name (``thresh``, ``trig``, ``FAIL`` ...)."""

    def __init__(self, name, inner):
        self.name = name
        self.inner = inner

    def holds(self, props):
        return self.inner.holds(props)

    def props(self):
        return self.inner.props()

    def compile(self, bits, words):
        return self.inner.compile(bits, words)

    def __repr__(self):
        return f"{self.name}:{self.inner!r}"


def conj(a: Guard | None, b: Guard | None) -> Guard | None:
    if a is None:
        return b
    if b is None:
        return a
    return a & b


# --------------------------------------------------------------------------
# The CTMC value type


@dataclass(frozen=True)
class SyncRule:
    label: str
    mode: str = FULL

    def __post_init__(self):
        if self.mode not in (FULL, INTERLEAVE):
            raise ValueError(f"unknown sync mode {self.mode!r}")


def _rule_modes(rules) -> dict[str, str]:
    if rules is None:
        return {}
    if isinstance(rules, Mapping):
        return dict(rules)
    out: dict[str, str] = {}
    for r in rules:
        if r.label in out and out[r.label] != r.mode:
            raise ValueError(f"label {r.label!r} has conflicting sync modes")
        out[r.label] = r.mode
    return out


def _n_words(n_props):
    return max(1, (n_props + 63) // 64)


class Ctmc:
    """A labelled CTMC ``(S, s0, Act, AP, L, R)``.

    Instances are treated as immutable. ``masks`` holds the labelling as a
    bit-set per state (bit ``i`` is ``props[i]``); ``guards`` is None for
    plain chains and a per-edge tuple for component chains.
    """

    def __init__(self, n_states, initial, src, dst, rate, label, actions, props, masks,
                 guards=None, state_names=None, initial_distribution=None):
        self.n_states = int(n_states)
        self.initial = int(initial)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.rate = np.asarray(rate, dtype=float)
        self.label = np.asarray(label, dtype=np.int64)
        self.actions = tuple(actions)
        self.props = tuple(props)
        self.masks = np.asarray(masks, dtype=np.uint64).reshape(self.n_states, _n_words(len(self.props)))
        self.guards = None if guards is None else tuple(guards)
        self.state_names = None if state_names is None else tuple(state_names)
        self.initial_distribution = None if initial_distribution is None else np.asarray(initial_distribution, float)
        if not 0 <= self.initial < self.n_states:
            raise ValueError("initial state out of range")
        if len(self.src):
            if (self.rate <= 0).any() or np.isnan(self.rate).any():
                raise ValueError("every rate must be positive")
            if self.src.min() < 0 or self.dst.min() < 0 or max(self.src.max(), self.dst.max()) >= self.n_states:
                raise ValueError("edge endpoint out of range")
            if self.label.min() < 0 or self.label.max() >= len(self.actions):
                raise ValueError("edge label not in the action set")
        if self.guards is not None and len(self.guards) != len(self.src):
            raise ValueError("guards must align with edges")

    # construction helpers -------------------------------------------------

    @classmethod
    def from_edges(cls, n_states, edges, labeling=None, initial=0, actions=None, props=None, state_names=None):
        """Build from ``(src, label, dst, rate[, guard])`` tuples and a ``{state: props}`` map."""
        edges = list(edges)
        acts = list(actions) if actions is not None else []
        for e in edges:
            if e[1] not in acts:
                acts.append(e[1])
        labeling = labeling or {}
        ap = list(props) if props is not None else []
        for s in sorted(labeling):
            for p in sorted(labeling[s]):
                if p not in ap:
                    ap.append(p)
        bits = {p: i for i, p in enumerate(ap)}
        masks = np.zeros((n_states, _n_words(len(ap))), dtype=np.uint64)
        for s, ps in labeling.items():
            for p in ps:
                b = bits[p]
                masks[s, b // 64] |= np.uint64(1) << np.uint64(b % 64)
        aidx = {a: i for i, a in enumerate(acts)}
        has_guards = any(len(e) > 4 and e[4] is not None for e in edges)
        guards = [e[4] if len(e) > 4 else None for e in edges] if has_guards else None
        return cls(
            n_states, initial,
            [e[0] for e in edges], [e[2] for e in edges], [float(e[3]) for e in edges],
            [aidx[e[1]] for e in edges], acts, ap, masks, guards=guards, state_names=state_names,
        )

    def replace_edges(self, edges, actions=None):
        """Same states and labelling, new edge list (tuples as in :meth:`from_edges`)."""
        edges = list(edges)
        acts = list(actions if actions is not None else self.actions)
        for e in edges:
            if e[1] not in acts:
                acts.append(e[1])
        aidx = {a: i for i, a in enumerate(acts)}
        has_guards = any(len(e) > 4 and e[4] is not None for e in edges)
        return Ctmc(
            self.n_states, self.initial,
            [e[0] for e in edges], [e[2] for e in edges], [float(e[3]) for e in edges],
            [aidx[e[1]] for e in edges], acts, self.props, self.masks,
            guards=[e[4] if len(e) > 4 else None for e in edges] if has_guards else None,
            state_names=self.state_names, initial_distribution=self.initial_distribution,
        )

    # views ----------------------------------------------------------------

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edges(self):
        """Iterate ``(src, label, dst, rate, guard)``."""
        for i in range(len(self.src)):
            g = self.guards[i] if self.guards is not None else None
            yield int(self.src[i]), self.actions[self.label[i]], int(self.dst[i]), float(self.rate[i]), g

    def labels_of(self, s) -> frozenset:
        row = self.masks[s]
        out = []
        for i, p in enumerate(self.props):
            if int(row[i // 64]) >> (i % 64) & 1:
                out.append(p)
        return frozenset(out)

    def state_name(self, s) -> str:
        return self.state_names[s] if self.state_names is not None else str(s)

    def satisfying(self, guard: Guard) -> np.ndarray:
        """Boolean array: which states satisfy ``guard`` (on their own labelling)."""
        bits = {p: i for i, p in enumerate(self.props)}
        return guard.compile(bits, self.masks.shape[1])(self.masks)

    def initial_vector(self) -> np.ndarray:
        if self.initial_distribution is not None:
            return self.initial_distribution.copy()
        v = np.zeros(self.n_states)
        v[self.initial] = 1.0
        return v

    def exit_rates(self) -> np.ndarray:
        """Total exit rate per state (self-loops excluded)."""
        keep = self.src != self.dst
        return np.bincount(self.src[keep], weights=self.rate[keep], minlength=self.n_states)

    def label_mask(self, name) -> np.ndarray:
        if name not in self.actions:
            return np.zeros(self.n_edges, dtype=bool)
        return self.label == self.actions.index(name)

    def with_absorbing(self, absorbing: np.ndarray) -> "Ctmc":
        """Drop every outgoing edge of the states flagged in ``absorbing``."""
        keep = ~np.asarray(absorbing, bool)[self.src]
        return Ctmc(
            self.n_states, self.initial, self.src[keep], self.dst[keep], self.rate[keep], self.label[keep],
            self.actions, self.props, self.masks,
            guards=None if self.guards is None else [g for g, k in zip(self.guards, keep) if k],
            state_names=self.state_names, initial_distribution=self.initial_distribution,
        )

    def relabel(self, mapping: Mapping[str, str]) -> "Ctmc":
        """Rename transition labels."""
        acts = []
        for a in self.actions:
            b = mapping.get(a, a)
            if b not in acts:
                acts.append(b)
        idx = np.array([acts.index(mapping.get(a, a)) for a in self.actions], dtype=np.int64)
        return Ctmc(
            self.n_states, self.initial, self.src, self.dst, self.rate,
            idx[self.label] if self.n_edges else self.label, acts, self.props, self.masks,
            guards=self.guards, state_names=self.state_names, initial_distribution=self.initial_distribution,
        )

    def __repr__(self):
        return f"Ctmc({self.n_states} states, {self.n_edges} edges, {len(self.actions)} labels)"


def with_idle_loops(c: Ctmc, labels: Iterable[str], rate: float = 1.0) -> Ctmc:
    """Add rate-``rate`` self-loops on ``labels`` to every state lacking an edge with that label.

    Lets a component take part in a fully synchronised action without
    blocking it in states where the action has no effect.
    """
    edges = list(c.edges())
    for lab in labels:
        have = {s for s, l, _, _, _ in edges if l == lab}
        for s in range(c.n_states):
            if s not in have:
                edges.append((s, lab, s, rate, None))
    return c.replace_edges(edges)


# --------------------------------------------------------------------------
# DELAY fragments


def elapsed_prop(name: str) -> str:
    return f"{name}.elapsed"


def tick_label(name: str) -> str:
    return f"tick[{name}]"


def restart_label(name: str) -> str:
    return f"restart[{name}]"


def erlang_delay(T, N, trigger_label, move_label, *, name=None, mu=INF, cyclic=True, restart_rate=INF,
                 restart_guard=None) -> Ctmc:
    """Erlang(N, N/T) approximation of a deterministic delay ``T``.

    States ``d0..d(N+1)``: ``d0`` waits for ``trigger_label`` (rate ``mu``),
    ``d1..dN`` are the phases, ``d(N+1)`` carries ``<name>.elapsed``. The
    phase that completes the delay (``dN -> d(N+1)``) carries ``move_label``;
    earlier phases use a local tick label. ``d(N+1)`` restarts to ``d1``
    (``cyclic``) or re-arms to ``d0``.
    """
    if not T > 0:
        raise ValueError("delay T must be positive")
    if int(N) != N or N < 1:
        raise ValueError("phase count N must be a positive integer")
    N = int(N)
    name = name or move_label
    rate = N / T
    tick = tick_label(name)
    edges = [(0, trigger_label, 1, mu, None)]
    for i in range(1, N):
        edges.append((i, tick, i + 1, rate, None))
    edges.append((N, move_label, N + 1, rate, None))
    edges.append((N + 1, restart_label(name), 1 if cyclic else 0, restart_rate, restart_guard))
    labeling = {N + 1: {elapsed_prop(name)}}
    names = [f"{name}:d{i}" for i in range(N + 2)]
    return Ctmc.from_edges(N + 2, edges, labeling, 0, props=[elapsed_prop(name)], state_names=names)


def erlang_delay_ext(T, N, trigger_label, move_label, reset_labels, *, name=None, mu=INF, cyclic=True,
                     restart_rate=INF) -> Ctmc:
    """Erlang DELAY with reset edges ``d_i -> d1`` (2 <= i <= N) on each reset label, local rate 1."""
    reset_labels = tuple(reset_labels)
    if not reset_labels:
        raise ValueError("extended DELAY needs at least one reset label")
    base = erlang_delay(T, N, trigger_label, move_label, name=name, mu=mu, cyclic=cyclic, restart_rate=restart_rate)
    edges = list(base.edges())
    for i in range(2, int(N) + 1):
        for lab in reset_labels:
            edges.append((i, lab, 1, 1.0, None))
    return base.replace_edges(edges)


# --------------------------------------------------------------------------
# Binary composition: interleaving and full synchronisation


def _product_prop_table(c1: Ctmc, c2: Ctmc):
    props = list(c1.props)
    for p in c2.props:
        if p not in props:
            props.append(p)
    return props


def _remap_masks(c: Ctmc, props) -> np.ndarray:
    bits = {p: i for i, p in enumerate(props)}
    W = _n_words(len(props))
    out = np.zeros((c.n_states, W), dtype=np.uint64)
    for i, p in enumerate(c.props):
        b = bits[p]
        has = (c.masks[:, i // 64] >> np.uint64(i % 64)) & np.uint64(1)
        out[:, b // 64] |= has << np.uint64(b % 64)
    return out


def compose(c1: Ctmc, c2: Ctmc, rules=None) -> Ctmc:
    """Parallel composition of two chains, pruned to states reachable from ``(s01, s02)``.

    Labels shared by both chains and marked full in ``rules`` move both
    components at rate ``l1 * l2``; every other label moves one component at
    its own rate. Guards are conjoined and left for :func:`compose_system`.
    """
    modes = _rule_modes(rules)
    shared_full = {a for a in set(c1.actions) & set(c2.actions) if modes.get(a, INTERLEAVE) == FULL}
    out1 = [[] for _ in range(c1.n_states)]
    out2 = [[] for _ in range(c2.n_states)]
    for e in c1.edges():
        out1[e[0]].append(e)
    for e in c2.edges():
        out2[e[0]].append(e)
    props = _product_prop_table(c1, c2)
    m1 = _remap_masks(c1, props)
    m2 = _remap_masks(c2, props)

    if c1.initial_distribution is not None or c2.initial_distribution is not None:
        raise CompositionError("compose expects chains with a single initial state")
    index = {(c1.initial, c2.initial): 0}
    order = [(c1.initial, c2.initial)]
    edges = []
    i = 0
    while i < len(order):
        s1, s2 = order[i]
        succ = []
        for (_, a, t1, r1, g1) in out1[s1]:
            if a in shared_full:
                for (_, b, t2, r2, g2) in out2[s2]:
                    if b == a:
                        succ.append((a, (t1, t2), r1 * r2, conj(g1, g2)))
            else:
                succ.append((a, (t1, s2), r1, g1))
        for (_, b, t2, r2, g2) in out2[s2]:
            if b not in shared_full:
                succ.append((b, (s1, t2), r2, g2))
        for a, tgt, r, g in succ:
            j = index.get(tgt)
            if j is None:
                j = index[tgt] = len(order)
                order.append(tgt)
            edges.append((i, a, j, r, g))
        i += 1

    masks = np.array([m1[a] | m2[b] for a, b in order], dtype=np.uint64).reshape(len(order), -1)
    acts = list(c1.actions) + [a for a in c2.actions if a not in c1.actions]
    names = [f"({c1.state_name(a)},{c2.state_name(b)})" for a, b in order]
    aidx = {a: k for k, a in enumerate(acts)}
    has_guards = any(e[4] is not None for e in edges)
    return Ctmc(
        len(order), 0, [e[0] for e in edges], [e[2] for e in edges], [e[3] for e in edges],
        [aidx[e[1]] for e in edges], acts, props, masks,
        guards=[e[4] for e in edges] if has_guards else None, state_names=names,
    )


def compose_fold(components: Sequence[Ctmc], rules=None) -> Ctmc:
    """Left fold of :func:`compose` (guards and immediate edges left unresolved)."""
    out = components[0]
    for c in components[1:]:
        out = compose(out, c, rules)
    return out


def lint_rate_carriers(components: Sequence[Ctmc], rules=None) -> list[str]:
    """Report fully synchronised labels where two participants both carry a rate other than 1."""
    modes = _rule_modes(rules)
    msgs = []
    for lab, mode in sorted(modes.items()):
        if mode != FULL:
            continue
        carriers = []
        for k, c in enumerate(components):
            if lab not in c.actions:
                continue
            r = c.rate[c.label_mask(lab)]
            if np.any(np.isfinite(r) & (r != 1.0)):
                carriers.append(k)
        if len(carriers) > 1:
            msgs.append(f"label {lab!r}: components {carriers} all carry non-unit rates")
    return msgs


# --------------------------------------------------------------------------
# N-ary composition with guard resolution and immediate-edge elimination


class _Comp:
    """Per-component tables used by the product explorer."""

    def __init__(self, c: Ctmc, bits, W):
        self.c = c
        self.size = c.n_states
        self.masks = _remap_masks_bits(c, bits, W)
        self.guard_fns = None
        if c.guards is not None:
            cache = {}
            fns = []
            for g in c.guards:
                if g is None:
                    fns.append(None)
                    continue
                key = id(g)
                if key not in cache:
                    cache[key] = g.compile(bits, W)
                fns.append(cache[key])
            self.guard_fns = fns


def _remap_masks_bits(c: Ctmc, bits, W):
    out = np.zeros((c.n_states, W), dtype=np.uint64)
    for i, p in enumerate(c.props):
        b = bits[p]
        has = (c.masks[:, i // 64] >> np.uint64(i % 64)) & np.uint64(1)
        out[:, b // 64] |= has << np.uint64(b % 64)
    return out


def _shortcut_local_immediates(c: Ctmc, sync_labels: set, observed: frozenset) -> Ctmc:
    """Bypass local states that are always left immediately and whose labels nobody reads.

    A state qualifies when all its immediate edges are unguarded, on
    interleaved labels, and at least one exists; timed edges out of it can
    never fire. Incoming edges are redirected to its immediate successors
    (equal split), which leaves the product semantics unchanged.
    """
    out: dict[int, list] = {}
    for e in c.edges():
        out.setdefault(e[0], []).append(e)

    def bypassable(s):
        if s == c.initial:
            return False
        imm = [e for e in out.get(s, []) if math.isinf(e[3])]
        if not imm:
            return False
        if any(e[4] is not None or e[1] in sync_labels for e in imm):
            return False
        if c.labels_of(s) & observed:
            return False
        return True

    skip = {s for s in range(c.n_states) if bypassable(s)}
    if not skip:
        return c

    def closure(s, depth=0):
        if depth > c.n_states:
            raise CompositionError("cycle of immediate transitions inside a component")
        if s not in skip:
            return [(s, 1.0)]
        imm = [e for e in out[s] if math.isinf(e[3])]
        res = []
        for e in imm:
            for t, p in closure(e[2], depth + 1):
                res.append((t, p / len(imm)))
        return res

    edges = []
    for e in c.edges():
        if e[0] in skip:
            continue
        for t, p in closure(e[2]):
            edges.append((e[0], e[1], t, e[3] * p, e[4]))
    return c.replace_edges(edges)


def compose_system(components: Sequence[Ctmc], rules=None, *, absorb: Guard | None = None,
                   collapse_absorbed: bool = True, observed: Iterable[str] = (),
                   state_budget: int | None = None, max_immediate_depth: int = 10_000) -> Ctmc:
    """Compose all components at once and return a plain tangible CTMC.

    Equivalent to folding :func:`compose` over the list and then

    * dropping guarded edges whose guard is false in their source state,
    * eliminating states that have enabled immediate (``inf``) edges, which
      are left at once with equal probability per immediate edge,
    * pruning states not reachable from the initial state.

    States satisfying ``absorb`` get no outgoing edges; with
    ``collapse_absorbed`` they are merged into one sink. ``observed`` lists
    propositions that must survive in the labelling (guards' propositions and
    ``absorb``'s are always kept).
    """
    comps_in = list(components)
    if not comps_in:
        raise ValueError("nothing to compose")
    modes = _rule_modes(rules)
    actions = []
    for c in comps_in:
        for a in c.actions:
            if a not in actions:
                actions.append(a)
    participants = {a: [k for k, c in enumerate(comps_in) if a in c.actions] for a in actions}
    full = {a for a in actions if modes.get(a, INTERLEAVE) == FULL}
    dead = {a for a in full if len(participants[a]) < 2 and len(comps_in) > 1}
    for a in sorted(dead):
        warnings.warn(f"full-sync label {a!r} has a single participant; its transitions are dropped", stacklevel=2)
    sync = full - dead if len(comps_in) > 1 else set()
    if len(comps_in) == 1:
        dead = set()

    referenced = set(observed)
    for c in comps_in:
        if c.guards is not None:
            for g in c.guards:
                if g is not None:
                    referenced |= g.props()
    if absorb is not None:
        referenced |= absorb.props()
    comps_pre = [_shortcut_local_immediates(c, sync, frozenset(referenced)) for c in comps_in]

    props = []
    for c in comps_pre:
        for p in c.props:
            if p not in props:
                props.append(p)
    bits = {p: i for i, p in enumerate(props)}
    W = _n_words(len(props))
    comps = [_Comp(c, bits, W) for c in comps_pre]
    sizes = [c.size for c in comps]
    radix = []
    acc = 1
    for s in sizes:
        radix.append(acc)
        acc *= s
    if acc >= 2 ** 62:
        raise CompositionError("product state space too large for 64-bit state codes")
    radix = np.array(radix, dtype=np.int64)
    sizes_a = np.array(sizes, dtype=np.int64)
    aidx = {a: i for i, a in enumerate(actions)}

    # Edge tables: interleaved edges per component; full-sync edges per (label, participant).
    local = []  # (comp, src, delta, rate, label_id, guard_fn)
    syncd: dict[str, list[list]] = {a: [] for a in sync}
    for k, cp in enumerate(comps):
        c = cp.c
        for i in range(c.n_edges):
            a = c.actions[c.label[i]]
            if a in dead:
                continue
            s, t, r = int(c.src[i]), int(c.dst[i]), float(c.rate[i])
            gf = cp.guard_fns[i] if cp.guard_fns is not None else None
            delta = (t - s) * int(radix[k])
            if a in sync:
                pass
            else:
                local.append((k, s, delta, r, aidx[a], gf))
        for a in sync:
            if a in c.actions:
                rows = []
                m = c.label == c.actions.index(a)
                for i in np.nonzero(m)[0]:
                    gf = cp.guard_fns[i] if cp.guard_fns is not None else None
                    s, t = int(c.src[i]), int(c.dst[i])
                    rows.append((s, (t - s) * int(radix[k]), float(c.rate[i]), gf))
                syncd[a].append((k, rows))
    imm_sync = {a for a in sync if any(math.isinf(r[2]) for _, rows in syncd[a] for r in rows)}
    local_imm = [e for e in local if math.isinf(e[3])]
    sync_order = sorted(sync)

    def decode(codes):
        return (codes[:, None] // radix[None, :]) % sizes_a[None, :]

    def state_masks(L):
        M = comps[0].masks[L[:, 0]].copy()
        for k in range(1, len(comps)):
            M |= comps[k].masks[L[:, k]]
        return M

    def enumerate_edges(codes, immediate_only=False):
        """All enabled edges of the given global states: (row, dst_code, rate, label_id)."""
        m = len(codes)
        L = decode(codes)
        M = state_masks(L)
        R, D, Rt, Lb = [], [], [], []
        for (k, s, delta, r, lab, gf) in (local_imm if immediate_only else local):
            sel = np.nonzero(L[:, k] == s)[0]
            if gf is not None and len(sel):
                sel = sel[gf(M[sel])]
            if len(sel):
                R.append(sel)
                D.append(codes[sel] + delta)
                Rt.append(np.full(len(sel), r))
                Lb.append(np.full(len(sel), lab, dtype=np.int64))
        for a in (sorted(imm_sync) if immediate_only else sync_order):
            rows = np.arange(m)
            dcode = codes.copy()
            rate = np.ones(m)
            for k, table in syncd[a]:
                if not len(rows):
                    break
                lk = L[rows, k]
                nr, nd, nrt = [], [], []
                for (s, delta, r, gf) in table:
                    sel = np.nonzero(lk == s)[0]
                    if gf is not None and len(sel):
                        sel = sel[gf(M[rows[sel]])]
                    if len(sel):
                        nr.append(rows[sel])
                        nd.append(dcode[sel] + delta)
                        nrt.append(rate[sel] * r)
                if nr:
                    rows, dcode, rate = np.concatenate(nr), np.concatenate(nd), np.concatenate(nrt)
                else:
                    rows = rows[:0]
            if len(rows):
                if immediate_only:
                    keep = np.isinf(rate)
                    rows, dcode, rate = rows[keep], dcode[keep], rate[keep]
                R.append(rows)
                D.append(dcode)
                Rt.append(rate)
                Lb.append(np.full(len(rows), aidx[a], dtype=np.int64))
        if not R:
            z = np.zeros(0, dtype=np.int64)
            return z, z, np.zeros(0), z
        return np.concatenate(R), np.concatenate(D), np.concatenate(Rt), np.concatenate(Lb)

    def resolve(codes, weights):
        """Follow immediate edges from ``codes`` until tangible; returns (origin, code, weight)."""
        origin = np.arange(len(codes))
        depth = 0
        done_o, done_c, done_w = [], [], []
        while len(codes):
            depth += 1
            if depth > max_immediate_depth:
                raise CompositionError("immediate transitions do not terminate (time-lock)")
            uniq, inv = np.unique(codes, return_inverse=True)
            row, dst, rate, _ = enumerate_edges(uniq, immediate_only=True)
            if not len(row):
                done_o.append(origin)
                done_c.append(codes)
                done_w.append(weights)
                break
            outdeg = np.bincount(row, minlength=len(uniq))
            vanishing = outdeg[inv] > 0
            done_o.append(origin[~vanishing])
            done_c.append(codes[~vanishing])
            done_w.append(weights[~vanishing])
            if not vanishing.any():
                break
            # expand vanishing entries over their immediate successors
            order = np.argsort(row, kind="stable")
            row, dst = row[order], dst[order]
            start = np.zeros(len(uniq) + 1, dtype=np.int64)
            np.cumsum(outdeg, out=start[1:])
            vi = np.nonzero(vanishing)[0]
            u = inv[vi]
            counts = outdeg[u]
            rep = np.repeat(vi, counts)
            offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
            succ = dst[np.repeat(start[u], counts) + offs]
            origin = origin[rep]
            weights = weights[rep] / np.repeat(counts, counts)
            codes = succ
        return np.concatenate(done_o), np.concatenate(done_c), np.concatenate(done_w)

    absorb_fn = absorb.compile(bits, W) if absorb is not None else None

    index: dict[int, int] = {}
    codes_list: list[np.ndarray] = []
    masks_list: list[np.ndarray] = []
    n = 0
    sink = None
    sink_mask = None

    def register(new_codes):
        """Assign indices to unseen tangible codes; returns (indices, frontier codes)."""
        nonlocal n, sink, sink_mask
        uniq = np.unique(new_codes)
        unseen = np.array([c for c in uniq.tolist() if c not in index], dtype=np.int64)
        frontier = unseen
        if len(unseen):
            L = decode(unseen)
            M = state_masks(L)
            if absorb_fn is not None:
                ab = absorb_fn(M)
            else:
                ab = np.zeros(len(unseen), dtype=bool)
            if collapse_absorbed and ab.any():
                if sink is None:
                    sink = -1  # placeholder, assigned at the end
                    sink_mask = M[np.nonzero(ab)[0][0]].copy()
                for c in unseen[ab].tolist():
                    index[c] = -1
                unseen, M, ab = unseen[~ab], M[~ab], ab[~ab]
            for c in unseen.tolist():
                index[c] = n
                n += 1
            if state_budget is not None and n > state_budget:
                raise StateBudgetExceeded(state_budget, n)
            codes_list.append(unseen)
            masks_list.append(M)
            frontier = unseen[~ab]
        return frontier

    # initial state(s)
    init_code = np.array([int(sum(int(c.c.initial) * int(radix[k]) for k, c in enumerate(comps)))], dtype=np.int64)
    for k, cp in enumerate(comps):
        if cp.c.initial_distribution is not None:
            raise CompositionError("components must have a single initial state")
    _, init_codes, init_w = resolve(init_code, np.ones(1))
    frontier = register(init_codes)

    E_src, E_dst, E_rate, E_lab = [], [], [], []
    while len(frontier):
        row, dst, rate, lab = enumerate_edges(frontier)
        if len(row):
            o, tc, w = resolve(dst, rate)
            src_codes = frontier[row[o]]
            E_src.append(src_codes)
            E_dst.append(tc)
            E_rate.append(w)
            E_lab.append(lab[o])
            frontier = register(tc)
        else:
            frontier = frontier[:0]

    n_total = n + (1 if sink is not None else 0)
    sink_idx = n
    def to_idx(codes):
        arr = np.fromiter((index[c] for c in codes.tolist()), dtype=np.int64, count=len(codes))
        arr[arr < 0] = sink_idx
        return arr

    all_masks = np.concatenate(masks_list) if masks_list else np.zeros((0, W), np.uint64)
    if sink is not None:
        all_masks = np.concatenate([all_masks, sink_mask[None, :]])
    if E_src:
        src = to_idx(np.concatenate(E_src))
        dst = to_idx(np.concatenate(E_dst))
        rate = np.concatenate(E_rate)
        lab = np.concatenate(E_lab)
        # merge identical (src, label, dst) edges
        key = np.stack([src, lab, dst], axis=1)
        uk, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        rate = np.bincount(inv, weights=rate, minlength=len(uk))
        src, lab, dst = uk[:, 0], uk[:, 1], uk[:, 2]
        if np.isinf(rate).any():
            raise CompositionError("immediate transition left in a tangible state")
    else:
        src = dst = lab = np.zeros(0, dtype=np.int64)
        rate = np.zeros(0)

    init_idx = to_idx(init_codes)
    init_dist = None
    if len(set(init_idx.tolist())) > 1:
        init_dist = np.bincount(init_idx, weights=init_w, minlength=n_total)
    initial = int(init_idx[np.argmax(init_w)])
    out = Ctmc(n_total, initial, src, dst, rate, lab, actions, props, all_masks, initial_distribution=init_dist)
    out.codes = np.concatenate(codes_list) if codes_list else np.zeros(0, np.int64)
    out.component_sizes = tuple(sizes)
    out.absorbed_sink = sink_idx if sink is not None else None
    return out


# --------------------------------------------------------------------------
# Debug export and comparison helpers


def to_text(c: Ctmc) -> str:
    """Flat text dump: ``src label rate dst`` per transition, then a labelling block."""
    lines = [f"# states {c.n_states} initial {c.initial}"]
    for s, lab, t, r, g in c.edges():
        extra = f" if {g!r}" if g is not None else ""
        lines.append(f"{s} {lab} {r!r} {t}{extra}")
    lines.append("labels")
    for s in range(c.n_states):
        ls = sorted(c.labels_of(s))
        if ls:
            lines.append(f"{s}: {' '.join(ls)}")
    return "\n".join(lines) + "\n"


def edge_signature(c: Ctmc, digits: int = 10):
    """Renumbering-invariant summary: sorted (label, rate) edge multiset and labelling multiset."""
    edges = sorted((c.actions[l], round(float(r), digits)) for l, r in zip(c.label, c.rate))
    labels = sorted(tuple(sorted(c.labels_of(s))) for s in range(c.n_states))
    return c.n_states, edges, labels


# --------------------------------------------------------------------------
# Rewards


@dataclass(frozen=True)
class RewardStructure:
    """State reward rates plus lump rewards on transitions.

    ``state_rewards`` pairs a guard with a rate earned per time unit while it
    holds; ``transition_rewards`` pairs a label with a lump reward per firing;
    ``entering`` pairs a guard with a lump reward for every edge from a state
    violating it into a state satisfying it.
    """

    state_rewards: tuple = ()
    transition_rewards: tuple = ()
    entering: tuple = ()

    def __post_init__(self):
        for _, v in self.state_rewards + self.transition_rewards + self.entering:
            if v < 0:
                raise ValueError("rewards must be non-negative")

    def rate_vector(self, c: Ctmc) -> np.ndarray:
        """Expected reward per time unit in each state (lump rewards times edge rates)."""
        out = np.zeros(c.n_states)
        for g, v in self.state_rewards:
            if v:
                out += v * c.satisfying(g)
        for lab, v in self.transition_rewards:
            if v:
                m = c.label_mask(lab)
                out += v * np.bincount(c.src[m], weights=c.rate[m], minlength=c.n_states)
        for g, v in self.entering:
            if v:
                sat = c.satisfying(g)
                m = ~sat[c.src] & sat[c.dst]
                out += v * np.bincount(c.src[m], weights=c.rate[m], minlength=c.n_states)
        return out
