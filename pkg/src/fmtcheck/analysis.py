"""Transient analysis by uniformization and the four FMT metrics.

All horizons of a query are served by one pass over the uniformized chain:
the iterates ``v_k = v_0 P^k`` do not depend on ``t``, only the Poisson
weights do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .ctmc import Ctmc

METRICS = ("reliability", "availability", "expected_cost", "expected_failures")


class NumericsError(RuntimeError):
    pass


@dataclass(frozen=True)
class NumericsConfig:
    epsilon: float = 1e-9
    max_iterations: int = 2_000_000

    def __post_init__(self):
        if not 0 < self.epsilon <= 1e-6:
            raise ValueError("epsilon must lie in (0, 1e-6]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass(frozen=True)
class MetricQuery:
    kind: str
    horizon: float

    def __post_init__(self):
        if self.kind not in METRICS:
            raise ValueError(f"unknown metric {self.kind!r}")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")


DEFAULT = NumericsConfig()


def generator(c: Ctmc) -> sp.csr_matrix:
    """Infinitesimal generator Q (self-loops dropped, parallel edges summed)."""
    keep = c.src != c.dst
    n = c.n_states
    Q = sp.csr_matrix((c.rate[keep], (c.src[keep], c.dst[keep])), shape=(n, n))
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr()


def uniformization_rate(c: Ctmc) -> float:
    r = c.exit_rates()
    if len(r) and not np.isfinite(r).all():
        raise NumericsError("chain still has immediate transitions")
    return float(r.max()) if len(r) else 0.0


def _truncation(lam_t, eps, cumulative):
    """Number of Poisson terms needed for tail mass (or tail time mass) <= eps."""
    if lam_t == 0:
        return 1
    K = int(poisson.isf(eps, lam_t)) + 1
    if cumulative:
        # tail of sum_k P(N > k) is E[(N - K)^+]; grow K until it is small
        while True:
            ks = np.arange(K, K + 64 + int(4 * math.sqrt(lam_t)))
            tail = poisson.sf(ks, lam_t).sum()
            if tail <= eps * max(1.0, lam_t):
                return K
            K = int(ks[-1])
    return K


class _Pass:
    """One uniformization sweep collecting projections for several horizons."""

    def __init__(self, c: Ctmc, horizons, cfg: NumericsConfig):
        self.c = c
        self.horizons = np.asarray(horizons, dtype=float)
        if (self.horizons < 0).any():
            raise ValueError("time must be >= 0")
        self.cfg = cfg
        self.lam = uniformization_rate(c)

    def run(self, point=None, cumulative=None, full=False):
        """Return (point[h, j], cum[h, j], vectors[h]) for projection matrices ``point``/``cumulative``."""
        n = self.c.n_states
        H = len(self.horizons)
        P = np.zeros((n, 0)) if point is None else np.asarray(point, float).reshape(n, -1)
        C = np.zeros((n, 0)) if cumulative is None else np.asarray(cumulative, float).reshape(n, -1)
        v = self.c.initial_vector()
        out_p = np.zeros((H, P.shape[1]))
        out_c = np.zeros((H, C.shape[1]))
        vecs = [np.zeros(n) for _ in range(H)] if full else None
        lam = self.lam
        if lam == 0:
            for h, t in enumerate(self.horizons):
                out_p[h] = v @ P
                out_c[h] = t * (v @ C)
                if full:
                    vecs[h] = v.copy()
            return out_p, out_c, vecs
        eps = self.cfg.epsilon
        lts = lam * self.horizons
        K = max(_truncation(x, eps, C.shape[1] > 0) for x in lts)
        if K > self.cfg.max_iterations:
            raise NumericsError(
                f"uniformization needs {K} iterations (Lambda*t = {lts.max():.6g}), "
                f"above max_iterations={self.cfg.max_iterations}"
            )
        ks = np.arange(K + 1)
        pmf = np.array([poisson.pmf(ks, x) if x > 0 else (ks == 0).astype(float) for x in lts])
        sf = np.array([poisson.sf(ks, x) if x > 0 else np.zeros(K + 1) for x in lts]) / lam
        PT = (sp.identity(n, format="csr") + generator(self.c) / lam).T.tocsr()
        for k in range(K + 1):
            if P.shape[1]:
                out_p += np.outer(pmf[:, k], v @ P)
            if C.shape[1]:
                out_c += np.outer(sf[:, k], v @ C)
            if full:
                for h in range(H):
                    if pmf[h, k]:
                        vecs[h] += pmf[h, k] * v
            if k < K:
                v = PT @ v
        return out_p, out_c, vecs


def transient_distribution(c: Ctmc, t: float, cfg: NumericsConfig = DEFAULT) -> np.ndarray:
    """State distribution at time ``t``."""
    _, _, vecs = _Pass(c, [t], cfg).run(full=True)
    return vecs[0]


def transient_many(c: Ctmc, times, cfg: NumericsConfig = DEFAULT) -> list[np.ndarray]:
    _, _, vecs = _Pass(c, list(times), cfg).run(full=True)
    return vecs


def reach_probability(c: Ctmc, target: np.ndarray, times, cfg: NumericsConfig = DEFAULT) -> np.ndarray:
    """P(reach ``target`` within [0, t]) for each t (targets made absorbing)."""
    target = np.asarray(target, bool)
    ca = c.with_absorbing(target)
    p, _, _ = _Pass(ca, list(times), cfg).run(point=target.astype(float))
    return p[:, 0]


def cumulative_reward(c: Ctmc, rates: np.ndarray, times, cfg: NumericsConfig = DEFAULT) -> np.ndarray:
    """Expected reward accumulated over [0, t] for a state reward-rate vector."""
    _, cum, _ = _Pass(c, list(times), cfg).run(cumulative=rates)
    return cum[:, 0]


# --------------------------------------------------------------------------
# Metrics on a SystemBundle


def evaluate(sys, metrics, horizons, cfg: NumericsConfig = DEFAULT) -> dict:
    """Compute ``{(metric, T): value}``; one uniformization pass per chain."""
    metrics = list(metrics)
    for m in metrics:
        if m not in METRICS:
            raise ValueError(f"unknown metric {m!r}")
    horizons = [float(t) for t in horizons]
    for t in horizons:
        if t < 0:
            raise ValueError("horizon must be >= 0")
    out = {}
    if "reliability" in metrics:
        chain = sys.reliability_chain()
        failed = sys.failed_mask(chain)
        p, _, _ = _Pass(chain, horizons, cfg).run(point=failed.astype(float))
        for t, x in zip(horizons, p[:, 0]):
            out[("reliability", t)] = float(min(1.0, max(0.0, 1.0 - x)))
    cums = [m for m in metrics if m != "reliability"]
    if cums:
        chain = sys.ctmc
        failed = sys.failed_mask(chain)
        cols = []
        for m in cums:
            if m == "availability":
                cols.append((~failed).astype(float))
            elif m == "expected_cost":
                cols.append(sys.rewards.rate_vector(chain))
            else:
                cols.append(sys.failure_counter.rate_vector(chain))
        _, cum, _ = _Pass(chain, horizons, cfg).run(cumulative=np.stack(cols, axis=1))
        init_up = float(chain.initial_vector() @ (~failed))
        for j, m in enumerate(cums):
            for h, t in enumerate(horizons):
                v = float(cum[h, j])
                if m == "availability":
                    v = init_up if t == 0 else min(1.0, max(0.0, v / t))
                out[(m, t)] = v
    return out


def reliability(sys, T, cfg: NumericsConfig = DEFAULT) -> float:
    return evaluate(sys, ["reliability"], [T], cfg)[("reliability", float(T))]


def availability(sys, T, cfg: NumericsConfig = DEFAULT) -> float:
    return evaluate(sys, ["availability"], [T], cfg)[("availability", float(T))]


def expected_cost(sys, T, cfg: NumericsConfig = DEFAULT) -> float:
    return evaluate(sys, ["expected_cost"], [T], cfg)[("expected_cost", float(T))]


def expected_failures(sys, T, cfg: NumericsConfig = DEFAULT) -> float:
    return evaluate(sys, ["expected_failures"], [T], cfg)[("expected_failures", float(T))]


def mttf_from_unreliability(D: float, T: float) -> float:
    """Mean of the exponential whose CDF passes through ``(T, D)``."""
    if not T > 0:
        raise ValueError("horizon must be positive")
    if not 0 < D < 1:
        raise ValueError(f"MTTF undefined for failure probability {D!r}; choose another horizon")
    return -T / math.log1p(-D)
