import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ewinfer.exact import EwConfig, EwFit, exact_ew_fit
from ewinfer.inference import (
    DegenerateDesign,
    OrderingViolation,
    beta_inference,
    beta_interval_q1,
    beta_region,
    check_ordering,
    chi2_quantile,
    estimate_beta,
    estimate_beta_q1,
    estimate_dbar,
    estimate_sigma_h,
    kappa_eps_hat,
    kappa_mu_hat,
    normal_quantile,
    sigma_eps_variants,
    sigma_mu_variants,
    variance_inference,
    variance_interval,
)
from ewinfer.linalg import Dataset

Z975 = 1.959963984540054


def zero_fit(n, p=1, u=1):
    return EwFit(np.zeros(p), np.zeros(n), 0.0, 0.0, 1.0, u, "exact")


def fit_with(fitted, mean_fit_sq, u=1):
    return EwFit(np.zeros(1), np.asarray(fitted, float), float(mean_fit_sq), 0.0, 1.0, u, "exact")


def test_quantiles():
    assert normal_quantile(0.95) == pytest.approx(Z975, abs=1e-10)
    assert chi2_quantile(0.95, 1) == pytest.approx(Z975**2, abs=1e-9)
    with pytest.raises(ValueError):
        normal_quantile(1.0)


def test_orthogonal_toy_is_ols(rng):
    n = 50
    x = rng.standard_normal((n, 2))
    y = x @ [1.0, -2.0] + rng.standard_normal(n)
    ds = Dataset(y, x, rng.standard_normal((n, 3)))
    b = estimate_beta(ds, zero_fit(n), [zero_fit(n), zero_fit(n)])
    np.testing.assert_allclose(b, np.linalg.lstsq(x, y, rcond=None)[0], rtol=1e-12)


def test_degenerate_design(rng):
    n = 20
    x = rng.standard_normal((n, 1))
    ds = Dataset(rng.standard_normal(n), x, rng.standard_normal((n, 2)))
    fit = fit_with(x[:, 0], 0.0)
    with pytest.raises(DegenerateDesign, match="degenerate residualized design"):
        estimate_beta(ds, zero_fit(n), [fit])


def test_scalar_path_equals_general_path(rng):
    for _ in range(50):
        n, p = 30, 6
        z = rng.standard_normal((n, p))
        x = z[:, :1] + rng.standard_normal((n, 1))
        y = 0.7 * x[:, 0] + z[:, 1] + rng.standard_normal(n)
        ds = Dataset(y, x, z)
        th = exact_ew_fit(z, y, EwConfig(3.0, 2))
        de = exact_ew_fit(z, x[:, 0], EwConfig(3.0, 2))
        b = estimate_beta(ds, th, [de])
        assert b[0] == pytest.approx(estimate_beta_q1(ds, th, de), rel=1e-10, abs=1e-12)
        sh = estimate_sigma_h(ds, [de])
        r = x[:, 0] - de.fitted
        assert sh[0, 0] == pytest.approx(r @ r / n, rel=1e-12)
        inf = beta_inference(b, sh, 1.3, n, 0.9)
        lo, hi = beta_interval_q1(b[0], 1.3, sh[0, 0], n, 0.9)
        np.testing.assert_allclose(inf.interval, (lo, hi), rtol=1e-10)
        np.testing.assert_allclose(inf.region.bounds()[0], (lo, hi), rtol=1e-10)


def test_sigma_h_identity():
    n = 16
    x = np.linalg.qr(np.random.default_rng(0).standard_normal((n, 3)))[0] * np.sqrt(n)
    ds = Dataset(np.zeros(n), x, np.ones((n, 1)))
    sh = estimate_sigma_h(ds, [zero_fit(n)] * 3)
    np.testing.assert_allclose(sh, np.eye(3), atol=1e-12)


def test_interval_formulas():
    lo, hi = beta_interval_q1(0.0, 1.0, 1.0, 100, 0.95)
    assert hi == pytest.approx(Z975 * 0.1, abs=1e-10)
    assert lo == -hi
    w100 = np.subtract(*beta_interval_q1(0.0, 1.0, 1.0, 100, 0.95)[::-1])
    w200 = np.subtract(*beta_interval_q1(0.0, 1.0, 1.0, 200, 0.95)[::-1])
    assert w100 / w200 == pytest.approx(np.sqrt(2), rel=1e-12)
    widths = [np.subtract(*beta_interval_q1(0, 1, 1, 100, lv)[::-1]) for lv in (0.5, 0.9, 0.99, 0.9999)]
    assert np.all(np.diff(widths) > 0)


def test_region_isotropic():
    n = 50
    reg = beta_region([0.0, 0.0], np.eye(2), 1.0, n, 0.95)
    c = chi2_quantile(0.95, 2)
    assert reg.contains([0.0, 0.0])
    r = np.sqrt(c / n)
    assert reg.contains([r * 0.999, 0.0])
    assert not reg.contains([r * 1.001, 0.0])
    assert not reg.contains([r * 0.8, r * 0.8])


def test_variance_variants_degenerate_cases():
    y = np.array([1.0, -2.0, 3.0])
    n = 3
    full = fit_with(y, y @ y)
    mu = sigma_mu_variants(y, full)
    assert mu["S"] == mu["M"] == mu["L"] == pytest.approx(y @ y / n)
    assert sigma_eps_variants(y, full)["S"] == 0.0
    zero = fit_with(np.zeros(3), 2.5)
    mu = sigma_mu_variants(y, zero)
    assert mu["S"] == 0.0 and mu["L"] == 0.0 and mu["M"] == pytest.approx(2.5 / 3)


def test_kappa_examples():
    assert kappa_mu_hat(np.full(5, 2.0), 4.0) == 0.0
    assert kappa_mu_hat([0.0, np.sqrt(2.0)], 1.0) == pytest.approx(1.0)
    assert kappa_eps_hat([1.5, -1.5, 1.5], 2.25) == 0.0
    r = np.random.default_rng(1).standard_normal(40)
    assert kappa_eps_hat(2 * r, 4 * 0.9) == pytest.approx(16 * kappa_eps_hat(r, 0.9), rel=1e-12)


def test_variance_interval_examples():
    assert variance_interval(1.0, 0.0, 100, 0.95) == (1.0, 1.0)
    lo, hi = variance_interval(1.0, 2.0, 100, 0.95)
    assert (hi - lo) / 2 == pytest.approx(Z975 * np.sqrt(0.02), rel=1e-10)


def test_dbar_is_s_variant(rng):
    z = rng.standard_normal((30, 6))
    y = z[:, 0] + rng.standard_normal(30)
    fit = exact_ew_fit(z, y, EwConfig(2.0, 2))
    for dof in (False, True):
        d = estimate_dbar(y, fit, dof_adjust=dof)
        assert d.estimate == sigma_eps_variants(y, fit, dof)["S"]


def test_ordering_and_identities_exact_mode():
    r = np.random.default_rng(5)
    for _ in range(100):
        n, p = int(r.integers(10, 40)), int(r.integers(3, 9))
        z = r.standard_normal((n, p))
        y = z[:, 0] * r.normal() + r.standard_normal(n)
        fit = exact_ew_fit(z, y, EwConfig(float(r.uniform(0.2, 20)), int(r.integers(1, 3))))
        mu = sigma_mu_variants(y, fit)
        eps = sigma_eps_variants(y, fit)
        tol = 1e-12 * (y @ y / n)
        assert mu["S"] <= mu["M"] + tol and mu["M"] <= mu["L"] + tol
        assert eps["S"] <= eps["M"] + tol and eps["M"] <= eps["L"] + tol
        assert eps["L"] == pytest.approx(y @ y / n - mu["S"], abs=1e-12 * max(1, y @ y / n))
        assert eps["M"] == pytest.approx(y @ y / n - mu["M"], abs=1e-12 * max(1, y @ y / n))


def test_check_ordering_tolerance():
    assert check_ordering({"S": 1.0, "M": 1.1, "L": 1.2}, "exact")
    assert not check_ordering({"S": 1.0, "M": 0.99, "L": 1.2}, "mcmc", se=0.01)
    with pytest.raises(OrderingViolation):
        check_ordering({"S": 1.0, "M": 0.9, "L": 1.2}, "mcmc", se=0.01)
    with pytest.raises(OrderingViolation):
        check_ordering({"S": 1.0, "M": 0.99, "L": 1.2}, "exact")


def test_mu_interval_wider_when_variance_larger(rng):
    z = rng.standard_normal((40, 6))
    y = 2 * z[:, 0] + rng.standard_normal(40)
    res = variance_inference(y, exact_ew_fit(z, y, EwConfig(2.0, 2)))
    complement = {"S": "L", "M": "M", "L": "S"}
    for v in "SML":
        m, e = res["sigma_mu_sq"][v], res["sigma_eps_sq"][v]
        avar = m.kappa_hat + 4 * res["sigma_eps_sq"][complement[v]].estimate * m.estimate
        assert m.length == pytest.approx(2 * Z975 * np.sqrt(avar / 40), rel=1e-10)
        assert (m.length > e.length) == (avar > e.kappa_hat)
        assert m.interval[0] + m.interval[1] == pytest.approx(2 * m.estimate)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), level=st.floats(0.5, 0.999))
def test_beta_inference_invariants(seed, level):
    r = np.random.default_rng(seed)
    q = int(r.integers(1, 4))
    a = r.standard_normal((q, q))
    sh = a @ a.T + 0.1 * np.eye(q)
    b = r.standard_normal(q)
    inf = beta_inference(b, sh, float(r.uniform(0.1, 3)), 50, level)
    assert inf.covers(b)
    if q == 1:
        lo, hi = inf.interval
        assert (lo + hi) / 2 == pytest.approx(b[0])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_permutation_equivariance(seed):
    r = np.random.default_rng(seed)
    n, p = 25, 6
    z = r.standard_normal((n, p))
    x = z[:, :1] + r.standard_normal((n, 1))
    y = x[:, 0] + z[:, 2] + r.standard_normal(n)
    perm = r.permutation(p)
    cfg = EwConfig(2.0, 2)
    out = []
    for zz in (z, z[:, perm]):
        ds = Dataset(y, x, zz)
        th, de = exact_ew_fit(zz, y, cfg), exact_ew_fit(zz, x[:, 0], cfg)
        var = variance_inference(y, th)
        out.append((estimate_beta(ds, th, [de])[0], var["sigma_mu_sq"]["M"].estimate))
    np.testing.assert_allclose(out[0], out[1], rtol=1e-9)


def test_sigma_h_symmetric_psd(rng):
    n, q = 40, 3
    z = rng.standard_normal((n, 5))
    x = rng.standard_normal((n, q))
    ds = Dataset(rng.standard_normal(n), x, z)
    fits = [exact_ew_fit(z, x[:, j], EwConfig(2.0, 2)) for j in range(q)]
    sh = estimate_sigma_h(ds, fits)
    assert np.abs(sh - sh.T).max() <= 1e-12
    assert np.linalg.eigvalsh(sh).min() >= -1e-10 * np.abs(sh).max()
