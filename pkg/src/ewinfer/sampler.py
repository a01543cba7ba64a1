"""Metropolis-Hastings walk over size-``u`` models (Johnson graph J(p, u, u-1)).

Neighbours of a model share ``u - 1`` columns with it. Proposals are uniform
over the ``u (p - u)`` neighbours and a move from ``m`` to ``k`` is accepted
with probability ``min(1, exp(-(RSS_k - RSS_m) / alpha))``, so the chain is
reversible with respect to the exponential weights.

The hot loop lives in :mod:`ewinfer._kernels`; this module owns the random
streams, the rare slow-path steps, periodic audits and the averaging.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._rng import derive_rng
from .exact import EwConfig, EwFit
from .linalg import (
    CONDITION_GUARD,
    DimensionError,
    GramSystem,
    SwapState,
    _factor,
    fit_submodel,
    rss_only,
    swap_state,
    swap_update_rss,
)

log = logging.getLogger(__name__)

AUDIT_EVERY = 10_000
AUDIT_RTOL = 1e-8
REFRESH_EVERY = 64


@dataclass(frozen=True)
class SamplerConfig:
    t0: int = 3000
    t: int = 7000
    seed: int = 0
    restarts: int = 1

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("t must be at least 1")
        if self.t0 < 0:
            raise ValueError("t0 must be non-negative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")


def acceptance_probability(delta_rss: float, alpha: float) -> float:
    """Metropolis acceptance probability for an RSS change ``delta_rss``."""
    if delta_rss <= 0:
        return 1.0
    return math.exp(-delta_rss / alpha)


@dataclass(frozen=True)
class WalkState:
    swap: SwapState
    step: int = 0

    @property
    def model(self) -> np.ndarray:
        return self.swap.model

    @property
    def rss(self) -> float:
        return self.swap.rss


def init_state(z, target, u: int, rng: np.random.Generator) -> WalkState:
    system = GramSystem.build(z, target)
    if not 1 <= u <= system.p:
        raise DimensionError(f"u={u} invalid for p={system.p}")
    return WalkState(swap_state(system, rng.choice(system.p, size=u, replace=False)))


def _propose(members: np.ndarray, p: int, rng: np.random.Generator) -> tuple[int, int]:
    u = members.size
    if u >= p:
        raise DimensionError("graph has no edges: u == p")
    drop = int(members[rng.integers(u)])
    mask = np.ones(p, dtype=bool)
    mask[members] = False
    add = int(np.flatnonzero(mask)[rng.integers(p - u)])
    return drop, add


def sample_neighbor(state: WalkState, rng: np.random.Generator) -> np.ndarray:
    """A uniformly chosen neighbour of the current model (sorted)."""
    members = state.swap.members
    drop, add = _propose(members, state.swap.system.p, rng)
    cand = members.copy()
    cand[members == drop] = add
    return np.sort(cand)


def mh_step(state: WalkState, alpha: float, rng: np.random.Generator) -> WalkState:
    """One Metropolis step: propose a neighbour, accept or stay."""
    drop, add = _propose(state.swap.members, state.swap.system.p, rng)
    new, rss_k = swap_update_rss(state.swap, drop, add)
    if rng.random() < acceptance_probability(rss_k - state.swap.rss, alpha):
        return WalkState(new, state.step + 1)
    return WalkState(state.swap, state.step + 1)


def transition_matrix(rss_values, models, alpha: float, p: int) -> np.ndarray:
    """Full Metropolis transition matrix over an explicit list of models.

    ``models`` must be every size-``u`` subset of ``range(p)``.
    """
    models = [frozenset(int(i) for i in m) for m in models]
    index = {m: k for k, m in enumerate(models)}
    u = len(next(iter(models)))
    degree = u * (p - u)
    rss = np.asarray(rss_values, dtype=np.float64)
    n_models = len(models)
    mat = np.zeros((n_models, n_models))
    for k, m in enumerate(models):
        for drop in m:
            for add in range(p):
                if add in m:
                    continue
                j = index[(m - {drop}) | {add}]
                mat[k, j] += acceptance_probability(rss[j] - rss[k], alpha) / degree
        mat[k, k] = 1.0 - mat[k].sum()
    return mat


def stationary_distribution(mat: np.ndarray) -> np.ndarray:
    """Probability vector ``pi`` with ``pi @ mat = pi``."""
    k = mat.shape[0]
    a = np.vstack([mat.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    return pi


# --------------------------------------------------------------------------
# Full chains
# --------------------------------------------------------------------------


@dataclass
class ChainResult:
    """Raw output of one chain (sums over the kept steps plus logs)."""

    coef_sum: np.ndarray
    fitsq_sum: float
    kept: int
    init: np.ndarray
    rss_trace: np.ndarray
    dropped: np.ndarray
    added: np.ndarray
    keep_from: int
    accepted: int
    slow_steps: int
    audit_max_dev: float
    backend: str

    def accepted_flags(self) -> np.ndarray:
        return self.dropped[self.keep_from:] >= 0

    def model_trace(self) -> np.ndarray:
        """Sorted model at every kept step, shape ``(kept, u)``."""
        current = list(int(i) for i in self.init)
        out = np.empty((self.kept, len(current)), dtype=np.int64)
        for t in range(self.dropped.shape[0]):
            d = self.dropped[t]
            if d >= 0:
                current[current.index(int(d))] = int(self.added[t])
            if t >= self.keep_from:
                out[t - self.keep_from] = sorted(current)
        return out

    def visited_models(self) -> int:
        current = set(int(i) for i in self.init)
        events = np.flatnonzero(self.dropped >= 0)
        before = events[events < self.keep_from]
        for t in before:
            current.discard(int(self.dropped[t]))
            current.add(int(self.added[t]))
        seen = {frozenset(current)}
        for t in events[events >= self.keep_from]:
            current.discard(int(self.dropped[t]))
            current.add(int(self.added[t]))
            seen.add(frozenset(current))
        return len(seen)


class _Walker:
    """Mutable state threaded through kernel segments and slow steps."""

    def __init__(self, system: GramSystem, init: np.ndarray):
        self.system = system
        p = system.p
        self.members = np.array(init, dtype=np.int64)
        mask = np.ones(p, dtype=bool)
        mask[self.members] = False
        self.nonmembers = np.flatnonzero(mask).astype(np.int64)
        u = self.members.size
        self.ginv = np.zeros((u, u))
        self.coef = np.zeros(u)
        self.scal = np.zeros(2)
        self.counters = np.zeros(2, dtype=np.int64)
        self.degenerate = False
        self.reset(rss_only(system.z, self.members, system.target))

    def reset(self, rss: float | None = None) -> None:
        fact = _factor(self.system, self.members)
        if fact is None:
            fit = fit_submodel(self.system.z, self.members, self.system.target)
            order = np.argsort(self.members)
            self.coef[order] = fit.coef
            self.ginv[:] = 0.0
            self.degenerate = True
            self.scal[0] = fit.rss
        else:
            self.ginv[:], self.coef[:] = fact
            self.degenerate = False
            if rss is None:
                rss = max(self.system.tt - float(self.system.ztarget[self.members] @ self.coef), 0.0)
            self.scal[0] = rss
        self.counters[0] = 0


def run_single_chain(
    system: GramSystem,
    u: int,
    alpha: float,
    t0: int,
    t: int,
    rng: np.random.Generator,
    kernel: str | None = None,
) -> ChainResult:
    """Run one chain of ``t0`` burn-in plus ``t`` kept steps."""
    p = system.p
    if u >= p:
        raise DimensionError("graph has no edges: u == p")
    backend, walk = _kernels.get_kernel(kernel)
    init = np.sort(rng.choice(p, size=u, replace=False)).astype(np.int64)
    w = _Walker(system, init)
    total = t0 + t
    coef_acc = np.zeros(p)
    rss_trace = np.empty(t)
    dropped = np.empty(total, dtype=np.int64)
    added = np.empty(total, dtype=np.int64)
    inv_alpha = 1.0 / alpha
    slow = 0
    audit_max = 0.0
    for lo in range(0, total, AUDIT_EVERY):
        hi = min(lo + AUDIT_EVERY, total)
        size = hi - lo
        drop_pos = rng.integers(0, u, size=size, dtype=np.int64)
        add_pos = rng.integers(0, p - u, size=size, dtype=np.int64)
        unif = rng.random(size)
        step = lo
        while step < hi:
            if w.degenerate:
                _slow_step(w, step, lo, drop_pos, add_pos, unif, inv_alpha, t0,
                           coef_acc, rss_trace, dropped, added)
                slow += 1
                step += 1
                continue
            step, status = walk(
                system.gram, system.ztarget, system.tt, w.members, w.nonmembers,
                w.ginv, w.coef, w.scal, w.counters, drop_pos, add_pos, unif,
                inv_alpha, step, hi, lo, t0, coef_acc, rss_trace, dropped, added,
                REFRESH_EVERY, CONDITION_GUARD,
            )
            if status == _kernels.NEEDS_SLOW_STEP:
                _slow_step(w, step, lo, drop_pos, add_pos, unif, inv_alpha, t0,
                           coef_acc, rss_trace, dropped, added)
                slow += 1
                step += 1
            elif status == _kernels.NEEDS_REFRESH:
                w.reset()
        fresh = rss_only(system.z, w.members, system.target)
        dev = abs(w.scal[0] - fresh) / max(fresh, np.finfo(float).tiny)
        audit_max = max(audit_max, dev)
        if dev > AUDIT_RTOL:
            log.warning("rss audit deviation %.3g at step %d; refactorizing", dev, hi)
            w.reset(fresh)
    return ChainResult(
        coef_sum=coef_acc,
        fitsq_sum=float(w.scal[1]),
        kept=t,
        init=init,
        rss_trace=rss_trace,
        dropped=dropped,
        added=added,
        keep_from=t0,
        accepted=int(w.counters[1]),
        slow_steps=slow,
        audit_max_dev=audit_max,
        backend=backend,
    )


def _slow_step(w: _Walker, step, lo, drop_pos, add_pos, unif, inv_alpha, keep_from,
               coef_acc, rss_trace, dropped, added):
    """Execute one step with a fresh pivoted-QR solve for the candidate."""
    system = w.system
    k = step - lo
    i = int(drop_pos[k])
    slot = int(add_pos[k])
    a = int(w.nonmembers[slot])
    cand = w.members.copy()
    cand[i] = a
    fit = fit_submodel(system.z, cand, system.target)
    rss = w.scal[0]
    delta = fit.rss - rss
    if delta <= 0.0 or unif[k] < math.exp(-delta * inv_alpha):
        old = int(w.members[i])
        w.members[i] = a
        w.nonmembers[slot] = old
        w.counters[1] += 1
        w.reset(fit.rss)
        dropped[step] = old
        added[step] = a
    else:
        dropped[step] = -1
        added[step] = -1
    if step >= keep_from:
        coef_acc[w.members] += w.coef
        w.scal[1] += system.tt - w.scal[0]
        rss_trace[step - keep_from] = w.scal[0]


def batch_means_se(x: np.ndarray) -> tuple[float, float]:
    """Standard error of the mean of a correlated series and its ESS."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 4:
        return float("nan"), float(n)
    b = max(int(math.sqrt(n)), 2)
    nb = n // b
    means = x[: nb * b].reshape(nb, b).mean(axis=1)
    var_b = means.var(ddof=1) if nb > 1 else 0.0
    se = math.sqrt(var_b / nb) if nb > 1 else float("nan")
    var_x = x.var(ddof=1)
    ess = float(n) if var_b <= 0 else float(min(n, var_x / (var_b / b)))
    return se, ess


def run_chain(
    z,
    target,
    ew_cfg: EwConfig,
    sampler_cfg: SamplerConfig,
    *,
    kernel: str | None = None,
    count_visited: bool = True,
    keep_chains: bool = False,
) -> EwFit:
    """Approximate the exponential-weights fit by Metropolis time averages.

    Independent restarts use child streams of ``sampler_cfg.seed`` and are
    averaged with equal weight. Results depend only on (seed, configs, data).
    """
    z = np.asarray(z, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    n, p = z.shape
    ew_cfg.validate(n, p)
    if ew_cfg.u >= p:
        raise DimensionError("graph has no edges: u == p")
    system = GramSystem.build(z, target)
    chains = [
        run_single_chain(
            system, ew_cfg.u, ew_cfg.alpha, sampler_cfg.t0, sampler_cfg.t,
            derive_rng(sampler_cfg.seed, r), kernel=kernel,
        )
        for r in range(sampler_cfg.restarts)
    ]
    return _combine(system, chains, ew_cfg, sampler_cfg, count_visited, keep_chains)


def _combine(system, chains, ew_cfg, sampler_cfg, count_visited, keep_chains) -> EwFit:
    coef = np.zeros(system.p)
    fitsq = 0.0
    for ch in chains:
        coef += ch.coef_sum / ch.kept
        fitsq += ch.fitsq_sum / ch.kept
    k = len(chains)
    coef /= k
    fitsq /= k
    ses, esss = zip(*(batch_means_se(ch.rss_trace) for ch in chains))
    se = math.sqrt(sum(s * s for s in ses)) / k if all(np.isfinite(ses)) else float("nan")
    total = sum(ch.dropped.shape[0] for ch in chains)
    diag = {
        "backend": chains[0].backend,
        "restarts": k,
        "t0": sampler_cfg.t0,
        "t": sampler_cfg.t,
        "seed": sampler_cfg.seed,
        "acceptance_rate": sum(ch.accepted for ch in chains) / total,
        "effective_sample_size": float(sum(esss)),
        "mean_fit_sq_se": se,
        "slow_steps": int(sum(ch.slow_steps for ch in chains)),
        "audit_max_rel_dev": float(max(ch.audit_max_dev for ch in chains)),
    }
    if count_visited:
        diag["visited_models"] = int(sum(ch.visited_models() for ch in chains))
    if keep_chains:
        diag["chains"] = chains
    return EwFit(
        coef=coef,
        fitted=system.z @ coef,
        mean_fit_sq=float(fitsq),
        log_normalizer=float("nan"),
        alpha=ew_cfg.alpha,
        u=ew_cfg.u,
        mode="mcmc",
        diagnostics=diag,
    )


def write_trace_csv(path, chain: ChainResult) -> None:
    """One row per kept step: step, rss, accepted."""
    flags = chain.accepted_flags()
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step", "rss", "accepted"])
        for j in range(chain.kept):
            wr.writerow([chain.keep_from + j, repr(float(chain.rss_trace[j])), int(flags[j])])
