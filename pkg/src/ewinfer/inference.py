"""Point estimates and confidence sets built from exponential-weights fits.

Covers the low-dimensional coefficient ``beta`` (scalar interval or
ellipsoidal region), the signal strength ``sigma_mu^2`` and the noise level
``sigma_eps^2`` (three variants each, labelled S, M and L).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exact import EwFit

log = logging.getLogger(__name__)

VARIANTS = ("S", "M", "L")
#: sigma_mu^2 variant -> sigma_eps^2 variant whose sum with it is ||Y||^2 / n
COMPLEMENT = {"S": "L", "M": "M", "L": "S"}
SINGULAR_COND = 1e12


class DegenerateDesign(ValueError):
    """The residualized focal design has a (numerically) singular cross product."""


class OrderingViolation(RuntimeError):
    """S <= M <= L failed by more than the allowed tolerance."""


def normal_quantile(level: float) -> float:
    """Upper ``(1 - level) / 2`` quantile of the standard normal."""
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    return float(stats.norm.isf((1.0 - level) / 2.0))


def chi2_quantile(level: float, df: int) -> float:
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    return float(stats.chi2.isf(1.0 - level, df))


# --------------------------------------------------------------------------
# beta
# --------------------------------------------------------------------------


def _residualized(x: np.ndarray, delta_fits) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if len(delta_fits) != x.shape[1]:
        raise ValueError(f"expected {x.shape[1]} delta fits, got {len(delta_fits)}")
    fitted = np.column_stack([f.fitted for f in delta_fits])
    return x - fitted


def estimate_beta(dataset, theta_fit: EwFit, delta_fits) -> np.ndarray:
    """Least squares of the Y-residuals on the X-residuals (matrix form)."""
    rx = _residualized(dataset.x, delta_fits)
    ry = dataset.y - theta_fit.fitted
    cross = rx.T @ rx
    if np.linalg.cond(cross) > SINGULAR_COND:
        raise DegenerateDesign(
            "degenerate residualized design: X - Z Delta has a singular cross product"
        )
    return np.linalg.solve(cross, rx.T @ ry)


def estimate_beta_q1(dataset, theta_fit: EwFit, delta_fit: EwFit) -> float:
    """Scalar ratio form for a single focal column."""
    rx = np.asarray(dataset.x, dtype=np.float64).reshape(-1) - delta_fit.fitted
    ry = dataset.y - theta_fit.fitted
    denom = rx @ rx
    if denom <= 0:
        raise DegenerateDesign("degenerate residualized design: X - Z delta is zero")
    return float(rx @ ry / denom)


def estimate_sigma_h(dataset, delta_fits) -> np.ndarray:
    rx = _residualized(dataset.x, delta_fits)
    s = rx.T @ rx / rx.shape[0]
    return 0.5 * (s + s.T)


def beta_interval_q1(beta_hat: float, sigma_eps_hat: float, sigma_eta_hat: float,
                     n: int, level: float) -> tuple[float, float]:
    half = normal_quantile(level) * np.sqrt(sigma_eps_hat / (sigma_eta_hat * n))
    return float(beta_hat - half), float(beta_hat + half)


@dataclass(frozen=True)
class Ellipsoid:
    """``{b : (b - center)^T shape (b - center) <= radius_sq}``."""

    center: np.ndarray
    shape: np.ndarray
    radius_sq: float

    def contains(self, beta) -> bool:
        d = np.asarray(beta, dtype=np.float64).reshape(-1) - self.center
        return bool(d @ self.shape @ d <= self.radius_sq * (1 + 1e-12))

    def bounds(self) -> np.ndarray:
        """Per-coordinate extent of the ellipsoid, shape ``(q, 2)``."""
        half = np.sqrt(self.radius_sq * np.diag(np.linalg.inv(self.shape)))
        return np.column_stack([self.center - half, self.center + half])


def beta_region(beta_hat, sigma_h_hat, sigma_eps_hat: float, n: int, level: float) -> Ellipsoid:
    beta_hat = np.asarray(beta_hat, dtype=np.float64).reshape(-1)
    sigma_h_hat = np.atleast_2d(np.asarray(sigma_h_hat, dtype=np.float64))
    q = beta_hat.size
    return Ellipsoid(beta_hat, (n / sigma_eps_hat) * sigma_h_hat, chi2_quantile(level, q))


@dataclass(frozen=True)
class BetaInference:
    beta_hat: np.ndarray
    sigma_h_hat: np.ndarray
    sigma_eps_hat: float
    level: float
    interval: tuple[float, float] | None
    region: Ellipsoid

    def covers(self, beta) -> bool:
        return self.region.contains(beta)


def beta_inference(beta_hat, sigma_h_hat, sigma_eps_hat: float, n: int, level: float) -> BetaInference:
    beta_hat = np.asarray(beta_hat, dtype=np.float64).reshape(-1)
    sigma_h_hat = np.atleast_2d(sigma_h_hat)
    region = beta_region(beta_hat, sigma_h_hat, sigma_eps_hat, n, level)
    interval = None
    if beta_hat.size == 1:
        interval = beta_interval_q1(beta_hat[0], sigma_eps_hat, sigma_h_hat[0, 0], n, level)
    return BetaInference(beta_hat, sigma_h_hat, float(sigma_eps_hat), level, interval, region)


# --------------------------------------------------------------------------
# variance components
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VarianceInference:
    estimate: float
    variant: str
    kappa_hat: float
    interval: tuple[float, float]
    dof_adjusted: bool = False

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]

    def covers(self, value: float) -> bool:
        return self.interval[0] <= value <= self.interval[1]


def sigma_mu_variants(y, mu_fit: EwFit) -> dict[str, float]:
    """S: ||mu_hat||^2/n;  M: aggregated ||P_m y||^2/n;  L: (||y||^2 - ||y - mu_hat||^2)/n."""
    y = _response(y)
    n = y.size
    mu = mu_fit.fitted
    r = y - mu
    return {
        "S": float(mu @ mu) / n,
        "M": float(mu_fit.mean_fit_sq) / n,
        "L": float(y @ y - r @ r) / n,
    }


def sigma_eps_variants(y, mu_fit: EwFit, dof_adjust: bool = False) -> dict[str, float]:
    """S: ||y - mu_hat||^2;  M: ||y||^2 - aggregated ||P_m y||^2;  L: ||y||^2 - ||mu_hat||^2.

    Each is divided by ``n``, or by ``n - u`` when ``dof_adjust``.
    """
    y = _response(y)
    n = y.size
    div = n - mu_fit.u if dof_adjust else n
    if div <= 0:
        raise ValueError(f"degrees of freedom n - u = {div} must be positive")
    mu = mu_fit.fitted
    r = y - mu
    yy = float(y @ y)
    return {
        "S": float(r @ r) / div,
        "M": (yy - float(mu_fit.mean_fit_sq)) / div,
        "L": (yy - float(mu @ mu)) / div,
    }


def kappa_mu_hat(fitted, sigma_mu_hat: float) -> float:
    fitted = np.asarray(fitted, dtype=np.float64)
    return float(np.mean((fitted**2 - sigma_mu_hat) ** 2))


def kappa_eps_hat(residuals, sigma_eps_hat: float) -> float:
    residuals = np.asarray(residuals, dtype=np.float64)
    return float(np.mean((residuals**2 - sigma_eps_hat) ** 2))


def variance_interval(estimate: float, asymptotic_var_hat: float, n: int,
                      level: float) -> tuple[float, float]:
    half = normal_quantile(level) * np.sqrt(max(asymptotic_var_hat, 0.0) / n)
    return float(estimate - half), float(estimate + half)


def check_ordering(values: dict[str, float], mode: str, se: float = float("nan"),
                   label: str = "") -> bool:
    """Check S <= M <= L.

    Exact fits must satisfy it to rounding. For sampled fits, violations up to
    twice ``se`` are logged and tolerated; larger ones raise.
    """
    s, m, l = values["S"], values["M"], values["L"]
    scale = max(abs(s), abs(m), abs(l), 1.0)
    gap = max(s - m, m - l)
    if gap <= 1e-10 * scale:
        return True
    allowed = 1e-10 * scale
    if mode == "mcmc" and np.isfinite(se):
        allowed += 2.0 * se
    if gap <= allowed:
        log.info("%s ordering S<=M<=L off by %.3g (within sampling tolerance)", label, gap)
        return False
    raise OrderingViolation(f"{label} ordering S<=M<=L violated by {gap:.3g}: {values}")


def variance_inference(y, mu_fit: EwFit, level: float = 0.95, dof_adjust: bool = False,
                       check: bool = True) -> dict[str, dict[str, VarianceInference]]:
    """All three variants of both variance components, with intervals.

    The ``sigma_mu^2`` interval of each variant plugs in the complementary
    ``sigma_eps^2`` variant (the one summing with it to ``||y||^2 / n``).
    """
    y = _response(y)
    n = y.size
    mu_hat = sigma_mu_variants(y, mu_fit)
    eps_hat = sigma_eps_variants(y, mu_fit, dof_adjust)
    if check:
        se = mu_fit.diagnostics.get("mean_fit_sq_se", float("nan")) / n
        check_ordering(mu_hat, mu_fit.mode, se, "sigma_mu^2")
        check_ordering(eps_hat, mu_fit.mode, se * n / max(n - mu_fit.u, 1), "sigma_eps^2")
    resid = y - mu_fit.fitted
    out_mu, out_eps = {}, {}
    for v in VARIANTS:
        ke = kappa_eps_hat(resid, eps_hat[v])
        out_eps[v] = VarianceInference(
            eps_hat[v], v, ke, variance_interval(eps_hat[v], ke, n, level), dof_adjust
        )
    for v in VARIANTS:
        km = kappa_mu_hat(mu_fit.fitted, mu_hat[v])
        avar = km + 4.0 * eps_hat[COMPLEMENT[v]] * mu_hat[v]
        out_mu[v] = VarianceInference(
            mu_hat[v], v, km, variance_interval(mu_hat[v], avar, n, level), False
        )
    return {"sigma_mu_sq": out_mu, "sigma_eps_sq": out_eps}


def estimate_dbar(y, mu_fit: EwFit, level: float = 0.95, dof_adjust: bool = False) -> VarianceInference:
    """Average error variance under correlated Gaussian errors (S variant)."""
    y = _response(y)
    est = sigma_eps_variants(y, mu_fit, dof_adjust)["S"]
    ke = kappa_eps_hat(y - mu_fit.fitted, est)
    return VarianceInference(est, "S", ke, variance_interval(est, ke, y.size, level), dof_adjust)


def _response(y) -> np.ndarray:
    if hasattr(y, "y"):
        y = y.y
    return np.asarray(y, dtype=np.float64).reshape(-1)
