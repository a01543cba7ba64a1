"""K-fold cross-validation over a grid of (alpha, u)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._parallel import pmap
from ._rng import derive_rng, derive_seed
from .exact import EwFit
from .linalg import greedy_path

DEFAULT_US = (2, 5, 10, 20)
DEFAULT_ALPHA_MULTIPLIERS = (4.0, 8.0, 16.0, 32.0)

#: ``runner(z, target, alpha, u, seed) -> EwFit``
EwRunner = Callable[[np.ndarray, np.ndarray, float, int, int], EwFit]


class InfeasibleGrid(ValueError):
    pass


@dataclass(frozen=True)
class TuningGrid:
    alphas: tuple
    us: tuple
    folds: int = 5
    seed: int = 0
    rule: str = "one_se"  # "one_se" | "min"

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "us", tuple(int(u) for u in self.us))
        if not self.alphas or not self.us:
            raise ValueError("grid needs at least one alpha and one u")
        if any(a <= 0 for a in self.alphas):
            raise ValueError("alphas must be positive")
        if any(u < 1 for u in self.us):
            raise ValueError("us must be positive")
        if self.folds < 2:
            raise ValueError("need at least two folds")
        if self.rule not in ("one_se", "min"):
            raise ValueError(f"unknown selection rule {self.rule!r}")


@dataclass
class TuningResult:
    alpha: float
    u: int
    table: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["alpha", "u", "cv_mse", "cv_se", "selected"])
            for row in self.table:
                sel = int(row["alpha"] == self.alpha and row["u"] == self.u)
                wr.writerow([repr(row["alpha"]), row["u"], repr(row["cv_mse"]),
                             repr(row["cv_se"]), sel])


def fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold label per row: one seeded shuffle, then contiguous blocks."""
    perm = derive_rng(seed, 0xF01D).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    for k, block in enumerate(np.array_split(perm, folds)):
        labels[block] = k
    return labels


def max_feasible_u(n: int, p: int, folds: int) -> int:
    smallest_train = n - int(np.ceil(n / folds))
    return min(smallest_train - 1, p)


def pilot_noise(z, target, u_max: int, folds: int = 5, seed: int = 0) -> float:
    """Held-out noise level along a greedy forward path.

    For each fold the greedy path (up to ``u_max`` columns) is built on the
    training rows; least-squares refits of every prefix are scored on the
    held-out rows. Returns the smallest pooled held-out MSE over path lengths
    1..u_max. The in-sample ``rss / (n - u_max)`` of the selected model is
    biased low by the selection itself, which would put the grid below the
    intended lower boundary.
    """
    z = np.asarray(z, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    n = z.shape[0]
    labels = fold_ids(n, folds, seed)
    sse = np.zeros(u_max)
    for k in range(folds):
        train = labels != k
        order, _ = greedy_path(z[train], target[train], u_max)
        for j in range(len(order)):
            cols = order[: j + 1]
            coef, *_ = np.linalg.lstsq(z[train][:, cols], target[train], rcond=None)
            r = target[~train] - z[~train][:, cols] @ coef
            sse[j] += r @ r
        sse[len(order):] = np.inf
    return float(sse.min() / n)


def default_grid(z, target, folds: int = 5, seed: int = 0,
                 us=DEFAULT_US, multipliers=DEFAULT_ALPHA_MULTIPLIERS,
                 rule: str = "one_se") -> TuningGrid:
    """Coarse grid: feasible ``us`` and alphas at multiples of a pilot noise level."""
    n, p = z.shape
    top = max_feasible_u(n, p, folds)
    feasible = tuple(u for u in us if u <= top)
    if not feasible:
        feasible = (max(min(top, p), 1),)
    v = pilot_noise(z, target, max(feasible), folds, seed)
    if not v > 0:
        v = float(np.var(target)) or 1.0
    return TuningGrid(tuple(m * v for m in multipliers), feasible, folds, seed, rule)


def cross_validate(z, target, grid: TuningGrid, ew_runner: EwRunner,
                   threads: int | None = None) -> TuningResult:
    """Pick ``(alpha, u)`` from pooled held-out squared error.

    With ``grid.rule == "min"`` the cell with the smallest error wins. With
    ``"one_se"`` (default) the candidates are the cells whose error is within
    one standard error (spread of the per-fold errors over sqrt(folds)) of the
    minimum; the smallest ``u`` among them is taken, and at that ``u`` the
    candidate with the smallest error. Remaining ties go to the smaller
    ``u`` and then the smaller ``alpha``.
    """
    z = np.asarray(z, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    n, p = z.shape
    if n < 2 * grid.folds:
        raise InfeasibleGrid(f"n={n} too small for {grid.folds} folds")
    top = max_feasible_u(n, p, grid.folds)
    bad = [u for u in grid.us if u > top]
    if bad:
        raise InfeasibleGrid(f"u values {bad} exceed the largest feasible size {top}")
    labels = fold_ids(n, grid.folds, grid.seed)
    cells = [(a, u) for u in grid.us for a in grid.alphas]
    jobs = [(ci, k) for ci in range(len(cells)) for k in range(grid.folds)]

    def run(job):
        ci, k = job
        alpha, u = cells[ci]
        train = labels != k
        fit = ew_runner(z[train], target[train], alpha, u, derive_seed(grid.seed, ci, k))
        resid = target[~train] - z[~train] @ fit.coef
        return float(resid @ resid), int((~train).sum())

    out = pmap(run, jobs, threads)
    table = []
    for ci, (alpha, u) in enumerate(cells):
        per = out[ci * grid.folds:(ci + 1) * grid.folds]
        sse = sum(s for s, _ in per)
        cnt = sum(c for _, c in per)
        fold_mse = np.array([s / c for s, c in per])
        se = float(fold_mse.std(ddof=1) / np.sqrt(grid.folds))
        table.append({"alpha": alpha, "u": u, "cv_mse": sse / cnt, "cv_se": se})
    best = min(table, key=lambda r: (r["cv_mse"], r["u"], r["alpha"]))
    if grid.rule == "one_se":
        bound = best["cv_mse"] + best["cv_se"]
        cands = [r for r in table if r["cv_mse"] <= bound]
        u_min = min(r["u"] for r in cands)
        best = min((r for r in cands if r["u"] == u_min),
                   key=lambda r: (r["cv_mse"], r["alpha"]))
    return TuningResult(best["alpha"], best["u"], table)
