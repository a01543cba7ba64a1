"""Least-squares fits on column subsets of a design matrix.

Everything here works on a submodel ``Z[:, m]`` for a sorted index set ``m``.
Two routes are provided:

* :func:`fit_submodel` / :func:`rss_only` -- a fresh pivoted-QR solve, robust to
  rank deficiency (minimum-norm coefficients).
* :class:`SwapState` / :func:`swap_update_rss` -- an incremental state kept in
  Gram space that moves between models differing in a single column in
  ``O(u^2)`` operations. It guards against ill conditioning and falls back to
  the fresh solve whenever the guard trips.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

#: Gram-space conditioning guard. A swap whose added column keeps less than
#: this fraction of its squared norm after projecting out the remaining
#: columns (i.e. a Gram condition number beyond ~1e8) is handed to the
#: pivoted-QR path.
CONDITION_GUARD = 1e-8


class DimensionError(ValueError):
    """Raised on incompatible array shapes or invalid model indices."""


@dataclass(frozen=True)
class Dataset:
    """Response ``y``, focal design ``x`` (n x q) and nuisance design ``z`` (n x p)."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        z = np.asarray(self.z, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        n = y.shape[0]
        if x.size == 0:
            x = np.zeros((n, 0))
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if z.ndim != 2 or x.ndim != 2:
            raise DimensionError("x and z must be 2-D arrays")
        if z.shape[0] != n or x.shape[0] != n:
            raise DimensionError(
                f"row mismatch: y has {n}, x has {x.shape[0]}, z has {z.shape[0]}"
            )
        if n < 2:
            raise DimensionError("need at least two observations")
        if z.shape[1] < 1:
            raise DimensionError("z must have at least one column")
        for name, arr in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def q(self) -> int:
        return self.x.shape[1]


def model_index(indices, p: int | None = None) -> np.ndarray:
    """Return the canonical (sorted, int64) form of a model index set.

    Raises :class:`DimensionError` on duplicates or indices outside ``[0, p)``.
    """
    m = np.asarray(indices, dtype=np.int64).reshape(-1)
    m = np.sort(m)
    if m.size and np.any(np.diff(m) == 0):
        raise DimensionError(f"duplicate indices in model {m.tolist()}")
    if m.size and m[0] < 0:
        raise DimensionError(f"negative index in model {m.tolist()}")
    if p is not None and m.size and m[-1] >= p:
        raise DimensionError(f"index {int(m[-1])} out of range for p={p}")
    return m


@dataclass(frozen=True)
class SubmodelFit:
    coef: np.ndarray
    fitted: np.ndarray
    rss: float
    rank: int


def _check(z: np.ndarray, m, target: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if z.ndim != 2:
        raise DimensionError("z must be 2-D")
    if target.shape[0] != z.shape[0]:
        raise DimensionError(
            f"target has length {target.shape[0]}, z has {z.shape[0]} rows"
        )
    m = model_index(m, z.shape[1])
    return z, m, target


def _rank_tol(r_diag: np.ndarray, n: int, u: int) -> float:
    # |R[0,0]| is the largest column norm under column pivoting
    scale = abs(r_diag[0]) if r_diag.size else 0.0
    return max(n, u) * np.finfo(np.float64).eps * scale


def fit_submodel(z, m, target) -> SubmodelFit:
    """Least-squares fit of ``target`` on ``z[:, m]``.

    Rank is detected with a column-pivoted QR. In the rank-deficient case the
    minimum-norm solution is returned through a complete orthogonal
    decomposition; ``fitted`` and ``rss`` do not depend on that choice.
    """
    z, m, target = _check(z, m, target)
    n, u = z.shape[0], m.size
    if u == 0:
        return SubmodelFit(np.zeros(0), np.zeros(n), float(target @ target), 0)
    zm = z[:, m]
    q, r, piv = scipy.linalg.qr(zm, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int(np.sum(d > _rank_tol(d, n, u)))
    if rank == 0:
        return SubmodelFit(np.zeros(u), np.zeros(n), float(target @ target), 0)
    qr_ = q[:, :rank]
    qty = qr_.T @ target
    fitted = qr_ @ qty
    resid = target - fitted
    coef = np.zeros(u)
    if rank == u:
        coef[piv] = scipy.linalg.solve_triangular(r, qty)
    else:
        # minimum norm: T = [R11 R12] (rank x u); x = T^+ qty
        t = r[:rank, :]
        q2, r2 = np.linalg.qr(t.T)
        w = scipy.linalg.solve_triangular(r2, qty, trans="T")
        coef[piv] = q2 @ w
    return SubmodelFit(coef, fitted, float(resid @ resid), rank)


def rss_only(z, m, target) -> float:
    """Residual sum of squares of ``target`` on ``z[:, m]``."""
    z, m, target = _check(z, m, target)
    if m.size == 0:
        return float(target @ target)
    zm = z[:, m]
    q, r, _ = scipy.linalg.qr(zm, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int(np.sum(d > _rank_tol(d, zm.shape[0], m.size)))
    resid = target - q[:, :rank] @ (q[:, :rank].T @ target)
    return float(resid @ resid)


def pinv_rss(z, m, target) -> tuple[float, np.ndarray]:
    """RSS and fitted values through the SVD pseudo-inverse (cross-check route)."""
    z, m, target = _check(z, m, target)
    zm = z[:, m]
    coef = np.linalg.pinv(zm) @ target
    fitted = zm @ coef
    resid = target - fitted
    return float(resid @ resid), fitted


# --------------------------------------------------------------------------
# Incremental path
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GramSystem:
    """Precomputed cross products shared by every state of one walk."""

    z: np.ndarray
    target: np.ndarray
    gram: np.ndarray
    ztarget: np.ndarray
    tt: float

    @classmethod
    def build(cls, z, target) -> "GramSystem":
        z = np.ascontiguousarray(z, dtype=np.float64)
        target = np.ascontiguousarray(target, dtype=np.float64).reshape(-1)
        if target.shape[0] != z.shape[0]:
            raise DimensionError("target length does not match z rows")
        gram = np.ascontiguousarray(z.T @ z)
        return cls(z, target, gram, z.T @ target, float(target @ target))

    @property
    def p(self) -> int:
        return self.gram.shape[0]


@dataclass(frozen=True)
class SwapState:
    """Incremental factorization of one submodel.

    ``members`` holds the model in working order (not necessarily sorted);
    ``ginv`` and ``coef`` are aligned with it. ``degenerate`` marks a model
    whose Gram block failed the conditioning guard; such a state carries
    coefficients from :func:`fit_submodel` and no inverse.
    """

    system: GramSystem = field(repr=False)
    members: np.ndarray
    ginv: np.ndarray | None
    coef: np.ndarray
    rss: float
    degenerate: bool = False
    fallbacks: int = 0

    @property
    def model(self) -> np.ndarray:
        return np.sort(self.members)

    def dense_coef(self) -> np.ndarray:
        out = np.zeros(self.system.p)
        out[self.members] = self.coef
        return out


def _factor(system: GramSystem, members: np.ndarray):
    """Inverse Gram block and coefficients, or ``None`` if the guard trips."""
    g = system.gram[np.ix_(members, members)]
    diag = np.diag(g)
    if np.any(diag <= 0):
        return None
    try:
        c, low = scipy.linalg.cho_factor(g, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    # squared pivots relative to column norms bound the conditioning
    piv = np.diag(c) ** 2 / diag
    if np.min(piv) <= CONDITION_GUARD:
        return None
    ginv = scipy.linalg.cho_solve((c, low), np.eye(members.size), check_finite=False)
    ginv = 0.5 * (ginv + ginv.T)
    coef = ginv @ system.ztarget[members]
    return ginv, coef


def swap_state(system: GramSystem, model) -> SwapState:
    """Fresh incremental state for ``model``."""
    members = model_index(model, system.p).copy()
    fact = _factor(system, members)
    if fact is None:
        fit = fit_submodel(system.z, members, system.target)
        return SwapState(system, members, None, fit.coef, fit.rss, degenerate=True)
    ginv, coef = fact
    rss = rss_only(system.z, members, system.target)
    return SwapState(system, members, ginv, coef, rss)


def refresh(state: SwapState) -> SwapState:
    """Refactorize from scratch, keeping the working order of ``members``."""
    system, members = state.system, state.members
    fact = _factor(system, members)
    if fact is None:
        fit = fit_submodel(system.z, members, system.target)
        return replace(state, ginv=None, coef=fit.coef, rss=fit.rss, degenerate=True)
    ginv, coef = fact
    rss = max(system.tt - float(system.ztarget[members] @ coef), 0.0)
    return replace(state, ginv=ginv, coef=coef, rss=rss, degenerate=False)


def swap_candidate(state: SwapState, pos: int, add: int):
    """Evaluate replacing ``members[pos]`` by column ``add``.

    Returns ``(rss, parts)`` where ``parts`` carries what :func:`apply_swap`
    needs, or ``None`` when the conditioning guard trips (``parts`` is then
    ``None`` as well).
    """
    s = state.system
    m = state.members
    ginv, coef = state.ginv, state.coef
    mii = ginv[pos, pos]
    ci = coef[pos]
    g = s.gram[add, m].copy()
    g[pos] = 0.0
    mg = ginv @ g
    col = ginv[:, pos]
    h = mg - col * (mg[pos] / mii)
    h[pos] = 0.0
    gaa = s.gram[add, add]
    schur = gaa - g @ h
    if gaa <= 0 or schur <= CONDITION_GUARD * gaa:
        return None, None
    coef_d = coef - col * (ci / mii)
    coef_d[pos] = 0.0
    rss_drop = state.rss + ci * ci / mii
    r = s.ztarget[add] - g @ coef_d
    rss_new = rss_drop - r * r / schur
    if rss_new < 0:
        return None, None
    return rss_new, (pos, add, h, schur, coef_d, r)


def apply_swap(state: SwapState, rss_new: float, parts) -> SwapState:
    pos, add, h, schur, coef_d, r = parts
    ginv = state.ginv
    col = ginv[:, pos].copy()
    mii = col[pos]
    new = ginv - np.outer(col, col) / mii + np.outer(h, h) / schur
    new[pos, :] = -h / schur
    new[:, pos] = -h / schur
    new[pos, pos] = 1.0 / schur
    coef = coef_d - h * (r / schur)
    coef[pos] = r / schur
    members = state.members.copy()
    members[pos] = add
    return replace(state, members=members, ginv=new, coef=coef, rss=float(rss_new))


def swap_update_rss(state: SwapState, drop: int, add: int) -> tuple[SwapState, float]:
    """Replace column ``drop`` of the model with column ``add``.

    Uses an O(u^2) Gram-space update; when the conditioning guard trips (or
    the current state is already degenerate) the new model is refactorized
    from scratch. Swapping a column for itself is a no-op.
    """
    members = state.members
    hit = np.flatnonzero(members == drop)
    if hit.size == 0:
        raise DimensionError(f"column {drop} is not in the model")
    if add == drop:
        return state, state.rss
    if not 0 <= add < state.system.p:
        raise DimensionError(f"column {add} out of range")
    if np.any(members == add):
        raise DimensionError(f"column {add} is already in the model")
    pos = int(hit[0])
    if not state.degenerate:
        rss_new, parts = swap_candidate(state, pos, add)
        if parts is not None:
            new = apply_swap(state, rss_new, parts)
            return new, new.rss
    members = members.copy()
    members[pos] = add
    fresh = refresh(replace(state, members=members))
    if not fresh.degenerate:
        # the Gram route cancels when rss << ||target||^2; prefer the QR value
        fresh = replace(fresh, rss=rss_only(state.system.z, members, state.system.target))
    fresh = replace(fresh, fallbacks=state.fallbacks + 1)
    return fresh, fresh.rss


def greedy_forward(z, target, size: int) -> tuple[np.ndarray, float]:
    """Greedy forward selection of ``size`` columns; returns (model, rss)."""
    order, rss = greedy_path(z, target, size)
    return model_index(order), rss


def greedy_path(z, target, size: int) -> tuple[list[int], float]:
    """Columns in the order greedy forward selection adds them, and the final rss."""
    z = np.asarray(z, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n, p = z.shape
    size = min(size, p, n - 1)
    resid = target.copy()
    chosen: list[int] = []
    zr = z.copy()
    for _ in range(size):
        norms = np.einsum("ij,ij->j", zr, zr)
        score = np.where(norms > 1e-12 * np.einsum("ij,ij->j", z, z).max(),
                         (zr.T @ resid) ** 2 / np.maximum(norms, 1e-300), -np.inf)
        score[chosen] = -np.inf
        j = int(np.argmax(score))
        if not np.isfinite(score[j]):
            break
        qj = zr[:, j] / np.sqrt(norms[j])
        chosen.append(j)
        resid = resid - qj * (qj @ resid)
        zr = zr - np.outer(qj, qj @ zr)
    return chosen, float(resid @ resid)
