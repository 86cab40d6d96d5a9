"""Monte Carlo oracle.

Two independent routes:

* :func:`simulate_chain` samples the composed CTMC of a SystemBundle,
  many runs in lockstep with numpy. It is an exact sampler of the chain the
  numeric engine analyses.
* :func:`simulate_tree` is a discrete-event simulation of the FMT itself,
  component by component, without building any product. Timer and repair
  delays are either Erlang distributed (``phase_type``) or exact
  (``deterministic``); degradation is Erlang distributed in both modes.

Random numbers come from PCG64 streams seeded with ``SeedSequence([seed, chunk])``
so results do not depend on how runs are split over workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import METRICS
from .model import FaultMaintenanceTree, duplicate_rdep_inputs
from .semantics import INSPECT, PERFORM_CLEAN, PERFORM_REPLACE, SystemBundle

RNG_NAME = "PCG64"
PHASE_TYPE = "phase_type"
DETERMINISTIC = "deterministic"
CHUNK = 4096


@dataclass(frozen=True)
class SimConfig:
    runs: int
    horizon: float | tuple = 1.0
    seed: int = 0
    delay_mode: str = PHASE_TYPE

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.delay_mode not in (PHASE_TYPE, DETERMINISTIC):
            raise ValueError(f"unknown delay mode {self.delay_mode!r}")

    @property
    def horizons(self) -> list[float]:
        h = self.horizon if isinstance(self.horizon, (tuple, list)) else (self.horizon,)
        out = [float(t) for t in h]
        if any(t < 0 for t in out):
            raise ValueError("horizon must be >= 0")
        return out


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    runs: int

    @property
    def ci(self):
        return self.mean - 1.959963984540054 * self.stderr, self.mean + 1.959963984540054 * self.stderr


@dataclass
class SimEstimate:
    """``values[(metric, T)]`` -> Estimate, plus provenance."""

    values: dict
    runs: int
    seed: int
    mode: str
    rng: str = RNG_NAME
    meta: dict = field(default_factory=dict)

    def __getitem__(self, key) -> Estimate:
        return self.values[key]


class _Moments:
    """Sums per (metric, horizon) column; merged over chunks."""

    def __init__(self, shape):
        self.n = 0
        self.s1 = np.zeros(shape)
        self.s2 = np.zeros(shape)

    def add(self, x):
        # x: (runs, ...) samples
        self.n += x.shape[0]
        self.s1 += x.sum(axis=0)
        self.s2 += (x * x).sum(axis=0)

    def estimate(self, idx) -> Estimate:
        n = self.n
        m = self.s1[idx] / n
        var = max(0.0, (self.s2[idx] / n - m * m)) * n / max(1, n - 1)
        return Estimate(float(m), math.sqrt(var / n), n)


def _chunks(runs):
    k = 0
    while runs > 0:
        m = min(CHUNK, runs)
        yield k, m
        runs -= m
        k += 1


def _rng(seed, chunk):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), chunk])))


# --------------------------------------------------------------------------
# Route 1: sample the composed chain


def simulate_chain(sys: SystemBundle, cfg: SimConfig) -> SimEstimate:
    """Lockstep sampling of the full composed CTMC of ``sys``."""
    c = sys.ctmc
    horizons = np.array(cfg.horizons)
    H = len(horizons)
    Tmax = horizons.max() if H else 0.0
    failed = sys.failed_mask(c)
    n = c.n_states
    order = np.argsort(c.src, kind="stable")
    src, dst, rate, lab = c.src[order], c.dst[order], c.rate[order], c.label[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=ptr[1:])
    exit_rate = np.bincount(src, weights=rate, minlength=n)
    cum = np.cumsum(rate)
    base = np.concatenate([[0.0], cum])[ptr[:-1]]

    lump = np.zeros(len(src))
    for label, value in sys.rewards.transition_rewards:
        if value and label in c.actions:
            lump += value * (lab == c.actions.index(label))
    state_rate = np.zeros(n)
    for g, v in sys.rewards.state_rewards:
        if v:
            state_rate += v * c.satisfying(g)
    enter = (~failed[src]) & failed[dst]

    mom = _Moments((4, H))
    init = c.initial_vector()
    for chunk, m in _chunks(cfg.runs):
        rng = _rng(cfg.seed, chunk)
        s = rng.choice(n, size=m, p=init) if c.initial_distribution is not None else np.full(m, c.initial)
        t = np.zeros(m)
        first_fail = np.where(failed[s], 0.0, np.inf)
        up = np.zeros((m, H))
        cost = np.zeros((m, H))
        nfail = np.zeros((m, H))
        active = np.arange(m)
        while len(active):
            sa = s[active]
            er = exit_rate[sa]
            dt = np.full(len(active), np.inf)
            live = er > 0
            dt[live] = rng.exponential(1.0 / er[live])
            t0 = t[active]
            t1 = t0 + dt
            # time spent in [t0, min(t1, T)] for every horizon
            span = np.clip(np.minimum(t1[:, None], horizons[None, :]) - t0[:, None], 0.0, None)
            up[active] += span * (~failed[sa])[:, None]
            cost[active] += span * state_rate[sa][:, None]
            fired = live & (t1 <= Tmax)
            idx = active[fired]
            if len(idx):
                sf = s[idx]
                u = rng.random(len(idx)) * exit_rate[sf]
                e = np.searchsorted(cum, base[sf] + u, side="right")
                e = np.clip(e, ptr[sf], ptr[sf + 1] - 1)
                tf = t1[fired]
                within = tf[:, None] <= horizons[None, :]
                cost[idx] += within * lump[e][:, None]
                nfail[idx] += within * enter[e][:, None]
                newly = failed[dst[e]] & np.isinf(first_fail[idx])
                first_fail[idx[newly]] = tf[newly]
                s[idx] = dst[e]
                t[idx] = tf
            active = idx
        rel = (first_fail[:, None] > horizons[None, :]).astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            avail = np.where(horizons[None, :] > 0, up / np.where(horizons > 0, horizons, 1.0)[None, :],
                             (~failed[np.full(m, c.initial)]).astype(float)[:, None])
        mom.add(np.stack([rel, avail, cost, nfail], axis=1))
    values = {}
    for i, metric in enumerate(METRICS):
        for h, T in enumerate(horizons):
            values[(metric, float(T))] = mom.estimate((i, h))
    return SimEstimate(values, cfg.runs, cfg.seed, PHASE_TYPE, meta={"engine": "chain", "states": n})


# --------------------------------------------------------------------------
# Route 2: discrete-event simulation of the tree


# event priorities for ties (lower fires first)
P_REPLACE, P_CLEAN, P_INSPECT, P_CHECK, P_DEGRADE = range(5)


class _Clock:
    """A delay as an amount of work consumed at a speed (RDEP changes the speed)."""

    __slots__ = ("work", "speed", "stamp", "on")

    def __init__(self):
        self.work = math.inf
        self.speed = 1.0
        self.stamp = 0.0
        self.on = False

    def start(self, work, now, speed=1.0):
        self.work, self.stamp, self.speed, self.on = work, now, speed, True

    def stop(self):
        self.on = False

    def due(self):
        if not self.on:
            return math.inf
        return self.stamp + self.work / self.speed

    def set_speed(self, now, speed):
        if self.on and speed != self.speed:
            self.work -= (now - self.stamp) * self.speed
            self.stamp = now
        self.speed = speed


def simulate_tree(tree: FaultMaintenanceTree, cfg: SimConfig, *, inspect_failed=False) -> SimEstimate:
    """Event-driven simulation of the FMT components (no composed chain)."""
    tree = duplicate_rdep_inputs(tree)
    pol = tree.policy
    ebes = [n for n in tree.ebes() if n.shadow_of is None]
    ids = [n.id for n in ebes]
    pos = {e: i for i, e in enumerate(ids)}
    levels = [n.params.degradation_levels for n in ebes]
    delay = [n.params.level_delay for n in ebes]
    phases = [n.params.erlang_phases for n in ebes]
    maint = [n.params.maintained for n in ebes]
    fail_set = [pos[e] for e in tree.failure_leaves()]
    rdep = {}  # child index -> list of (trigger index, gamma)
    for r in tree.rdeps():
        for ch in r.params.children:
            rdep.setdefault(pos[ch], []).append((pos[r.params.trigger], r.params.gamma))
    watched = [i for i in range(len(ids)) if maint[i]]
    horizons = sorted(cfg.horizons)
    H = len(horizons)
    Tmax = horizons[-1] if H else 0.0
    deterministic = cfg.delay_mode == DETERMINISTIC
    costs = tree.costs
    k_timer = pol.timer_phases
    k_rep = pol.repair_delay_phases

    mom = _Moments((4, H))
    for chunk, m in _chunks(cfg.runs):
        rng = _rng(cfg.seed, chunk)

        def work(T, k):
            # timers and repair durations; exact in deterministic mode
            return T if deterministic else float(rng.gamma(k, T / k))

        def wear(i):
            # degradation is random in both modes
            return float(rng.gamma(phases[i], delay[i] / phases[i]))

        out = np.zeros((m, 4, H))
        for run in range(m):
            lvl = [0] * len(ids)
            clocks = [_Clock() for _ in ids]
            for i in range(len(ids)):
                clocks[i].start(wear(i), 0.0)
            trp, toh, tin, rep = _Clock(), _Clock(), _Clock(), _Clock()
            rep_kind = None
            if pol.t_rp is not None:
                trp.start(work(pol.t_rp, k_timer), 0.0)
            if pol.t_oh is not None:
                toh.start(work(pol.t_oh, k_timer), 0.0)
            if pol.t_in is not None:
                tin.start(work(pol.t_in, k_timer), 0.0)
            now = 0.0
            first_fail = math.inf
            up = [0.0] * H
            cost = [0.0] * H
            nf = [0.0] * H
            busy = False

            def is_failed():
                return any(lvl[i] == levels[i] for i in fail_set)

            def speeds():
                for ch, lst in rdep.items():
                    s = 1.0
                    for trg, g in lst:
                        if lvl[trg] == levels[trg]:
                            s *= g
                    clocks[ch].set_speed(now, s)

            def lump(t, v):
                for h in range(H):
                    if t <= horizons[h]:
                        cost[h] += v

            fail_now = is_failed()
            if fail_now:
                first_fail = 0.0
            while True:
                cands = []
                if rep.on:
                    cands.append((rep.due(), P_REPLACE if rep_kind == "replace" else P_CLEAN, "rep", -1))
                if tin.on:
                    cands.append((tin.due(), P_INSPECT, "tin", -1))
                if trp.on:
                    cands.append((trp.due(), P_CHECK, "trp", -1))
                if toh.on:
                    cands.append((toh.due(), P_CHECK, "toh", -1))
                for i in range(len(ids)):
                    if clocks[i].on:
                        cands.append((clocks[i].due(), P_DEGRADE, "deg", i))
                if not cands:
                    nxt = math.inf
                else:
                    nxt, _, kind, i = min(cands)
                end = min(nxt, Tmax)
                rate_now = costs.operational_rate + (costs.failure_rate if fail_now else 0.0)
                for h in range(H):
                    span = max(0.0, min(end, horizons[h]) - now)
                    if not fail_now:
                        up[h] += span
                    cost[h] += rate_now * span
                if nxt > Tmax:
                    break
                now = nxt
                if kind == "deg":
                    lvl[i] += 1
                    if lvl[i] < levels[i]:
                        clocks[i].start(wear(i), now, clocks[i].speed)
                    else:
                        clocks[i].stop()
                    speeds()
                elif kind == "rep":
                    for j in watched:
                        lvl[j] = 0 if rep_kind == "replace" else max(0, lvl[j] - 1)
                        clocks[j].start(wear(j), now, clocks[j].speed)
                    lump(now, costs.replace_cost if rep_kind == "replace" else costs.clean_cost)
                    rep.stop()
                    busy = False
                    speeds()
                else:
                    trig = any(lvl[j] > 0 for j in watched)
                    thresh = any(0 < lvl[j] < levels[j] or (inspect_failed and lvl[j] == levels[j])
                                 for j in watched)
                    if kind == "tin":
                        lump(now, costs.inspect_cost)
                        tin.start(work(pol.t_in, k_timer), now)
                        want = thresh
                        what = "clean"
                    elif kind == "trp":
                        trp.start(work(pol.t_rp, k_timer), now)
                        want = trig
                        what = "clean"
                    else:
                        toh.start(work(pol.t_oh, k_timer), now)
                        want = trig
                        what = "replace"
                    if want and not busy:
                        busy = True
                        rep_kind = what
                        rep.start(work(pol.t_rpl if what == "replace" else pol.t_cln, k_rep), now)
                f = is_failed()
                if f and not fail_now:
                    for h in range(H):
                        if now <= horizons[h]:
                            nf[h] += 1
                    if math.isinf(first_fail):
                        first_fail = now
                fail_now = f
            for h, T in enumerate(horizons):
                out[run, 0, h] = 1.0 if first_fail > T else 0.0
                out[run, 1, h] = up[h] / T if T > 0 else (0.0 if first_fail == 0 else 1.0)
                out[run, 2, h] = cost[h]
                out[run, 3, h] = nf[h]
        mom.add(out)
    values = {}
    for i, metric in enumerate(METRICS):
        for h, T in enumerate(horizons):
            values[(metric, float(T))] = mom.estimate((i, h))
    return SimEstimate(values, cfg.runs, cfg.seed, cfg.delay_mode, meta={"engine": "tree"})


def simulate(target, cfg: SimConfig, **kw) -> SimEstimate:
    """Dispatch: a SystemBundle is sampled as a chain, a tree by events."""
    if isinstance(target, SystemBundle):
        if cfg.delay_mode != PHASE_TYPE:
            raise ValueError("a composed chain can only be sampled in phase_type mode")
        return simulate_chain(target, cfg)
    return simulate_tree(target, cfg, **kw)


def cross_check(numeric: float, est: Estimate) -> dict:
    """z-score of a numeric value against a simulation estimate; passes iff z <= 3."""
    diff = abs(numeric - est.mean)
    if est.stderr == 0:
        z = 0.0 if diff <= 1e-12 * max(1.0, abs(numeric)) else math.inf
    else:
        z = diff / est.stderr
    return {"numeric": numeric, "mean": est.mean, "stderr": est.stderr, "z": z, "pass": z <= 3.0}
