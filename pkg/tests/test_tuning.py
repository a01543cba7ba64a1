import numpy as np
import pytest

from ewinfer.exact import EwConfig, exact_ew_fit
from ewinfer.pipeline import PipelineConfig, fit_ew
from ewinfer.tuning import (
    InfeasibleGrid,
    TuningGrid,
    cross_validate,
    default_grid,
    fold_ids,
    max_feasible_u,
    pilot_noise,
)


def exact_runner(z, target, alpha, u, seed):
    return exact_ew_fit(z, target, EwConfig(alpha, u))


def test_fold_ids_balanced_and_deterministic():
    a = fold_ids(23, 5, 7)
    assert np.array_equal(a, fold_ids(23, 5, 7))
    assert sorted(np.bincount(a).tolist()) == [4, 4, 5, 5, 5]
    assert not np.array_equal(a, fold_ids(23, 5, 8))


def test_single_cell_wins(rng):
    z = rng.standard_normal((30, 6))
    y = rng.standard_normal(30)
    res = cross_validate(z, y, TuningGrid((2.0,), (2,)), exact_runner)
    assert (res.alpha, res.u) == (2.0, 2)
    assert len(res.table) == 1


def test_table_shape_and_determinism(rng, tmp_path):
    z = rng.standard_normal((40, 7))
    y = z[:, 0] + rng.standard_normal(40)
    grid = TuningGrid((1.0, 4.0, 16.0), (1, 2, 3), seed=3)
    a = cross_validate(z, y, grid, exact_runner)
    b = cross_validate(z, y, grid, exact_runner, threads=3)
    assert len(a.table) == 9
    assert a.table == b.table and (a.alpha, a.u) == (b.alpha, b.u)
    a.write_csv(tmp_path / "cv.csv")
    rows = (tmp_path / "cv.csv").read_text().splitlines()
    assert rows[0] == "alpha,u,cv_mse,cv_se,selected"
    assert sum(r.endswith(",1") for r in rows[1:]) == 1


def test_min_rule_and_tie_breaking(rng):
    z = rng.standard_normal((30, 5))
    y = rng.standard_normal(30)

    def flat(z_, t_, alpha, u, seed):
        # identical zero predictions in every cell: a pure tie
        fit = exact_ew_fit(z_, t_, EwConfig(alpha, u))
        fit.coef[:] = 0.0
        return fit

    grid = TuningGrid((8.0, 2.0), (3, 1), rule="min")
    res = cross_validate(z, y, grid, flat)
    assert (res.alpha, res.u) == (2.0, 1)


def test_one_se_rule_prefers_smaller_u(rng):
    z = rng.standard_normal((60, 8))
    y = 2 * z[:, 0] + rng.standard_normal(60)
    grid = TuningGrid((4.0,), (1, 4))
    res_min = cross_validate(z, y, TuningGrid((4.0,), (1, 4), rule="min"), exact_runner)
    res = cross_validate(z, y, grid, exact_runner)
    best = min(r["cv_mse"] for r in res.table)
    chosen = next(r for r in res.table if r["u"] == res.u)
    assert chosen["cv_mse"] <= best + next(r for r in res.table if r["cv_mse"] == best)["cv_se"]
    assert res.u <= res_min.u


def test_infeasible_grid(rng):
    z = rng.standard_normal((20, 30))
    y = rng.standard_normal(20)
    with pytest.raises(InfeasibleGrid, match=r"\[16\]"):
        cross_validate(z, y, TuningGrid((1.0,), (2, 16)), exact_runner)
    assert max_feasible_u(20, 30, 5) == 15


def test_no_leakage(rng):
    z = rng.standard_normal((30, 5))
    y = z[:, 1] + rng.standard_normal(30)
    grid = TuningGrid((2.0,), (2,), folds=3, seed=1)
    base = cross_validate(z, y, grid, exact_runner).table[0]["cv_mse"]
    labels = fold_ids(30, 3, 1)
    i = int(np.flatnonzero(labels == 0)[0])
    j = int(np.flatnonzero(labels == 1)[0])
    z2, y2 = z.copy(), y.copy()
    z2[j], y2[j] = z[i], y[i]  # a held-out row of fold 0 now also sits in fold 1
    other = cross_validate(z2, y2, grid, exact_runner).table[0]["cv_mse"]
    assert other != base


def test_pilot_noise_near_truth():
    r = np.random.default_rng(4)
    vals = []
    for _ in range(20):
        z = r.standard_normal((100, 150))
        y = z[:, :3] @ [1.0, -1.0, 0.5] + r.standard_normal(100)
        vals.append(pilot_noise(z, y, 20))
    assert 0.85 < np.mean(vals) < 1.3


def test_default_grid(rng):
    z = rng.standard_normal((50, 12))
    y = rng.standard_normal(50)
    g = default_grid(z, y)
    assert g.us == (2, 5, 10)  # 20 > min(p, training fold - 1)
    assert np.allclose(np.array(g.alphas) / g.alphas[0], [1, 2, 4, 8])


def _noise_and_signal_selection(signal, us, rule, reps=50):
    out = []
    for k in range(reps):
        r = np.random.default_rng(1000 + k)
        z = r.standard_normal((60, 12))
        coef = np.zeros(12)
        if signal:
            coef[:3] = r.uniform(-1, 1, 3)
            coef *= np.sqrt(2.0) / np.linalg.norm(coef)
        y = z @ coef + r.standard_normal(60)
        cfg = PipelineConfig(us=us)
        grid = default_grid(z, y, us=us, seed=k, rule=rule)
        res = cross_validate(z, y, grid, lambda a, b, al, u, s: fit_ew(a, b, al, u, cfg, s))
        out.append(res.u)
    return np.array(out)


@pytest.mark.parametrize("rule", ["min", "one_se"])
def test_pure_noise_selects_smallest_u(rule):
    us = _noise_and_signal_selection(False, (1, 3, 6), rule)
    assert np.mean(us == 1) >= 0.7


def test_sparse_signal_not_underfit_min_rule():
    us = _noise_and_signal_selection(True, (1, 3, 6), "min")
    assert np.mean(us >= 3) >= 0.9


def test_sparse_signal_one_se_rule():
    # the parsimony rule gives up some of this (measured 0.84 on these seeds)
    us = _noise_and_signal_selection(True, (1, 3, 6), "one_se")
    assert np.mean(us >= 3) >= 0.8
