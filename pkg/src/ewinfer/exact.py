"""Exponential weights by full enumeration of the size-``u`` models."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

from .linalg import CONDITION_GUARD, DimensionError, GramSystem, fit_submodel

DEFAULT_ENUMERATION_CAP = 200_000
_CHUNK = 4096


class EnumerationTooLarge(ValueError):
    """Exact enumeration requested beyond the cap; use the sampler instead."""

    def __init__(self, count: int, cap: int):
        super().__init__(
            f"C(p, u) = {count} models exceeds the enumeration cap {cap}; "
            "use the sampler (run_chain) instead"
        )
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class EwConfig:
    alpha: float
    u: int
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        if not self.alpha > 0 or not np.isfinite(self.alpha):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if int(self.u) != self.u or self.u < 1:
            raise ValueError(f"u must be a positive integer, got {self.u}")
        if self.enumeration_cap < 1:
            raise ValueError("enumeration_cap must be positive")

    def validate(self, n: int, p: int) -> None:
        if self.u > min(n - 1, p):
            raise DimensionError(f"u={self.u} exceeds min(n-1, p)={min(n - 1, p)}")


@dataclass
class EwFit:
    """Aggregated least-squares fit under exponential weights.

    ``coef`` is the weighted average of the per-model coefficient vectors
    embedded in R^p, ``fitted = z @ coef``, and ``mean_fit_sq`` is the
    weighted average of ``||P_m target||^2``.
    """

    coef: np.ndarray
    fitted: np.ndarray
    mean_fit_sq: float
    log_normalizer: float
    alpha: float
    u: int
    mode: str
    diagnostics: dict = field(default_factory=dict)


def exact_weights(rss_values, alpha: float) -> tuple[np.ndarray, float]:
    """Normalized weights ``w_m ∝ exp(-rss_m / alpha)`` and the log normalizer.

    The log normalizer is ``log sum_m exp(-rss_m / alpha)``.
    """
    rss = np.asarray(rss_values, dtype=np.float64).reshape(-1)
    if rss.size == 0:
        raise ValueError("empty model list")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not np.all(np.isfinite(rss)):
        raise ValueError("rss values must be finite")
    score = -rss / alpha
    top = score.max()
    e = np.exp(score - top)
    total = e.sum()
    return e / total, float(top + np.log(total))


@lru_cache(maxsize=32)
def _model_table(p: int, u: int) -> np.ndarray:
    count = comb(p, u)
    flat = np.fromiter(
        (i for c in combinations(range(p), u) for i in c), dtype=np.int64, count=count * u
    )
    table = flat.reshape(count, u)
    table.setflags(write=False)
    return table


def model_count(p: int, u: int) -> int:
    return comb(p, u)


def enumerate_models(p: int, u: int, cap: int = DEFAULT_ENUMERATION_CAP):
    """All size-``u`` subsets of ``range(p)`` in lexicographic order."""
    if u < 0 or u > p:
        raise DimensionError(f"u={u} invalid for p={p}")
    count = comb(p, u)
    if count > cap:
        raise EnumerationTooLarge(count, cap)
    return combinations(range(p), u)


def model_table(p: int, u: int, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Array form of :func:`enumerate_models`, shape ``(C(p, u), u)``."""
    count = comb(p, u)
    if count > cap:
        raise EnumerationTooLarge(count, cap)
    return _model_table(p, u)


def _chunk_fits(system: GramSystem, models: np.ndarray):
    """Batched Gram solves for a block of models; refits flagged ones by QR."""
    g = system.gram[models[:, :, None], models[:, None, :]]
    c = system.ztarget[models]
    diag = np.einsum("kii->ki", g)
    coef = np.empty_like(c)
    bad = np.zeros(models.shape[0], dtype=bool)
    try:
        chol = np.linalg.cholesky(g)
        piv = np.einsum("kii->ki", chol) ** 2 / diag
        bad = ~np.all(piv > CONDITION_GUARD, axis=1)
    except np.linalg.LinAlgError:
        chol = None
        bad[:] = True
    good = ~bad
    if chol is not None and good.any():
        w = np.linalg.solve(chol[good], c[good][:, :, None])
        coef[good] = np.linalg.solve(np.swapaxes(chol[good], 1, 2), w)[:, :, 0]
    rss = np.empty(models.shape[0])
    for k in np.flatnonzero(bad):
        fit = fit_submodel(system.z, models[k], system.target)
        coef[k] = fit.coef
        rss[k] = fit.rss
    # residual computed directly keeps full relative accuracy for small rss
    zc = np.einsum("nmk,mk->mn", system.z[:, models[good]], coef[good]) if good.any() else None
    if zc is not None:
        r = system.target[None, :] - zc
        rss[good] = np.einsum("mn,mn->m", r, r)
    return coef, rss


def exact_ew_fit(z, target, cfg: EwConfig) -> EwFit:
    """Exponential-weights aggregate over every model of size ``cfg.u``."""
    z = np.asarray(z, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    n, p = z.shape
    cfg.validate(n, p)
    models = model_table(p, cfg.u, cfg.enumeration_cap)
    system = GramSystem.build(z, target)
    coefs = np.empty(models.shape, dtype=np.float64)
    rss = np.empty(models.shape[0])
    for lo in range(0, models.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, models.shape[0])
        coefs[lo:hi], rss[lo:hi] = _chunk_fits(system, models[lo:hi])
    return _aggregate(system, models, coefs, rss, cfg)


def _aggregate(system: GramSystem, models, coefs, rss, cfg: EwConfig) -> EwFit:
    weights, log_norm = exact_weights(rss, cfg.alpha)
    coef = np.zeros(system.p)
    # fixed-order reduction: one bincount over the flattened table
    coef += np.bincount(
        models.reshape(-1), weights=(coefs * weights[:, None]).reshape(-1), minlength=system.p
    )
    fitted = system.z @ coef
    mean_fit_sq = float(weights @ (system.tt - rss))
    ess = float(1.0 / np.sum(weights**2))
    return EwFit(
        coef=coef,
        fitted=fitted,
        mean_fit_sq=mean_fit_sq,
        log_normalizer=log_norm,
        alpha=cfg.alpha,
        u=cfg.u,
        mode="exact",
        diagnostics={
            "visited_models": int(models.shape[0]),
            "effective_sample_size": ess,
            "max_weight": float(weights.max()),
            "argmax_model": models[int(np.argmax(weights))].tolist(),
        },
    )


def exact_weights_table(z, target, u: int, alpha: float, cap: int = DEFAULT_ENUMERATION_CAP):
    """Models, their RSS and normalized weights (used by oracle checks)."""
    z = np.asarray(z, dtype=np.float64)
    system = GramSystem.build(z, target)
    models = model_table(z.shape[1], u, cap)
    rss = np.empty(models.shape[0])
    for lo in range(0, models.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, models.shape[0])
        rss[lo:hi] = _chunk_fits(system, models[lo:hi])[1]
    w, _ = exact_weights(rss, alpha)
    return models, rss, w
