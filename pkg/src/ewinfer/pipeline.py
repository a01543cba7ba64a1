"""End-to-end estimation: tuning, exponential-weights fits and inference."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._rng import derive_seed
from .exact import DEFAULT_ENUMERATION_CAP, EwConfig, EwFit, exact_ew_fit, model_count
from .inference import (
    VARIANTS,
    BetaInference,
    VarianceInference,
    beta_inference,
    estimate_beta,
    estimate_sigma_h,
    sigma_eps_variants,
    check_ordering,
    variance_inference,
)
from .linalg import Dataset, fit_submodel
from .sampler import SamplerConfig, run_chain
from .tuning import DEFAULT_ALPHA_MULTIPLIERS, DEFAULT_US, TuningGrid, cross_validate, default_grid

# stage keys for seed derivation
_THETA, _DELTA, _MU, _TUNE = 1, 2, 3, 4


@dataclass(frozen=True)
class PipelineConfig:
    """Everything that controls one inference run."""

    mode: str = "auto"  # "auto" | "exact" | "mcmc"
    t0: int = 3000
    t: int = 7000
    restarts: int = 1
    cv_t0: int = 1000
    cv_t: int = 3000
    folds: int = 5
    cv_rule: str = "one_se"
    us: tuple = DEFAULT_US
    alpha_multipliers: tuple = DEFAULT_ALPHA_MULTIPLIERS
    alpha: float | None = None  # fixed parameters skip tuning when both are set
    u: int | None = None
    level: float = 0.95
    dof_adjust: bool = False
    beta_variant: str = "S"
    correlated: bool = False
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    threads: int | None = None
    trace: bool = False  # keep per-chain logs for trace export

    def __post_init__(self):
        if self.mode not in ("auto", "exact", "mcmc"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.beta_variant not in VARIANTS:
            raise ValueError(f"beta_variant must be one of {VARIANTS}")
        if not 0 < self.level < 1:
            raise ValueError("level must be in (0, 1)")
        object.__setattr__(self, "us", tuple(int(u) for u in self.us))
        object.__setattr__(self, "alpha_multipliers", tuple(float(a) for a in self.alpha_multipliers))

    def to_dict(self) -> dict:
        return asdict(self)


def fit_ew(z, target, alpha: float, u: int, cfg: PipelineConfig, seed: int,
           t0: int | None = None, t: int | None = None, count_visited: bool = True) -> EwFit:
    """Exact enumeration when allowed and feasible, else the Metropolis sampler."""
    n, p = z.shape
    ew = EwConfig(alpha, u, cfg.enumeration_cap)
    feasible = model_count(p, u) <= cfg.enumeration_cap
    if u >= p or cfg.mode == "exact" or (cfg.mode == "auto" and feasible):
        return exact_ew_fit(z, target, ew)
    sc = SamplerConfig(cfg.t0 if t0 is None else t0, cfg.t if t is None else t, seed, cfg.restarts)
    return run_chain(z, target, ew, sc, count_visited=count_visited,
                     keep_chains=cfg.trace and count_visited)


def _cv_runner(cfg: PipelineConfig):
    def runner(z, target, alpha, u, seed):
        return fit_ew(z, target, alpha, u, cfg, seed, cfg.cv_t0, cfg.cv_t, count_visited=False)
    return runner


def make_grid(z, target, cfg: PipelineConfig, seed: int) -> TuningGrid:
    """Default grid, narrowed to any parameter the config fixes."""
    grid = default_grid(z, target, cfg.folds, seed, cfg.us, cfg.alpha_multipliers, cfg.cv_rule)
    if cfg.u is not None:
        grid = replace(grid, us=(cfg.u,))
    if cfg.alpha is not None:
        grid = replace(grid, alphas=(cfg.alpha,))
    return grid


def tuned_fit(z, target, cfg: PipelineConfig, seed: int) -> tuple[EwFit, dict]:
    """Tune (alpha, u) by cross-validation unless both are fixed, then fit."""
    if cfg.alpha is not None and cfg.u is not None:
        alpha, u, info = cfg.alpha, cfg.u, {"tuned": False}
    else:
        grid = make_grid(z, target, cfg, derive_seed(seed, _TUNE))
        res = cross_validate(z, target, grid, _cv_runner(cfg), cfg.threads)
        alpha, u = res.alpha, res.u
        info = {"tuned": True, "table": res.table}
    fit = fit_ew(z, target, alpha, u, cfg, seed)
    info.update(alpha=float(alpha), u=int(u))
    return fit, info


# --------------------------------------------------------------------------
# beta
# --------------------------------------------------------------------------


@dataclass
class BetaResult:
    beta_hat: np.ndarray
    sigma_h_hat: np.ndarray
    sigma_eps_hat: dict
    inference: dict  # variant -> BetaInference
    dbar_hat: float | None
    theta: EwFit
    deltas: list
    mu: EwFit
    tuning: dict = field(default_factory=dict)

    def default(self, variant: str = "S") -> BetaInference:
        return self.inference[variant]


def infer_beta(dataset: Dataset, cfg: PipelineConfig, seed: int = 0) -> BetaResult:
    """Three-stage estimator of ``beta`` with intervals/regions for each noise variant.

    ``sigma_eps^2`` is estimated from an exponential-weights fit of ``y`` on
    ``[x, z]`` with the tuned temperature of the ``y``-on-``z`` fit and
    ``q`` extra columns.
    """
    if dataset.q < 1:
        raise ValueError("fit-beta needs at least one focal column")
    z, n, q = dataset.z, dataset.n, dataset.q
    theta, theta_info = tuned_fit(z, dataset.y, cfg, derive_seed(seed, _THETA))
    deltas, delta_info = [], []
    for j in range(q):
        f, info = tuned_fit(z, dataset.x[:, j], cfg, derive_seed(seed, _DELTA, j))
        deltas.append(f)
        delta_info.append(info)
    beta_hat = estimate_beta(dataset, theta, deltas)
    sigma_h = estimate_sigma_h(dataset, deltas)

    xz = np.hstack([dataset.x, z])
    u_mu = min(theta_info["u"] + q, n - 1, xz.shape[1])
    mu = fit_ew(xz, dataset.y, theta_info["alpha"], u_mu, cfg, derive_seed(seed, _MU))
    eps = sigma_eps_variants(dataset.y, mu, cfg.dof_adjust)
    check_ordering(eps, mu.mode, mu.diagnostics.get("mean_fit_sq_se", np.nan)
                   / max(n - (mu.u if cfg.dof_adjust else 0), 1), "sigma_eps^2")
    dbar = eps["S"] if cfg.correlated else None
    inf = {v: beta_inference(beta_hat, sigma_h, eps[v], n, cfg.level) for v in VARIANTS}
    return BetaResult(
        beta_hat=beta_hat,
        sigma_h_hat=sigma_h,
        sigma_eps_hat=eps,
        inference=inf,
        dbar_hat=dbar,
        theta=theta,
        deltas=deltas,
        mu=mu,
        tuning={"theta": theta_info, "delta": delta_info,
                "mu": {"alpha": float(theta_info["alpha"]), "u": int(u_mu)}},
    )


def oracle_beta(dataset: Dataset, support, level: float = 0.95) -> BetaInference:
    """Least squares on ``[x, z_S]`` for a known support ``S``."""
    support = np.asarray(sorted(set(int(s) for s in support)), dtype=np.int64)
    n, q = dataset.n, dataset.q
    zs = dataset.z[:, support]
    fy = fit_submodel(zs, np.arange(support.size), dataset.y) if support.size else None
    ry = dataset.y - (fy.fitted if fy is not None else 0.0)
    rx = np.empty_like(dataset.x)
    for j in range(q):
        fx = fit_submodel(zs, np.arange(support.size), dataset.x[:, j]) if support.size else None
        rx[:, j] = dataset.x[:, j] - (fx.fitted if fx is not None else 0.0)
    beta_hat = np.linalg.solve(rx.T @ rx, rx.T @ ry)
    resid = ry - rx @ beta_hat
    sigma_eps = float(resid @ resid) / (n - q - support.size)
    sigma_h = rx.T @ rx / n
    return beta_inference(beta_hat, sigma_h, sigma_eps, n, level)


# --------------------------------------------------------------------------
# variance components
# --------------------------------------------------------------------------


@dataclass
class VarianceResult:
    sigma_mu_sq: dict  # variant -> VarianceInference
    sigma_eps_sq: dict
    mu: EwFit
    tuning: dict = field(default_factory=dict)


def infer_variance(dataset: Dataset, cfg: PipelineConfig, seed: int = 0) -> VarianceResult:
    """Signal strength and noise level; focal columns, if any, join the design."""
    design = np.hstack([dataset.x, dataset.z]) if dataset.q else dataset.z
    mu, info = tuned_fit(design, dataset.y, cfg, derive_seed(seed, _MU))
    res = variance_inference(dataset.y, mu, cfg.level, cfg.dof_adjust)
    return VarianceResult(res["sigma_mu_sq"], res["sigma_eps_sq"], mu, {"mu": info})


def oracle_variance(dataset: Dataset, support, level: float = 0.95,
                    dof_adjust: bool = False) -> dict[str, VarianceInference]:
    """Least-squares plug-ins on a known support."""
    support = np.asarray(sorted(set(int(s) for s in support)), dtype=np.int64)
    y, n = dataset.y, dataset.n
    fit = fit_submodel(dataset.z, support, y)
    mu = fit.fitted
    fake = EwFit(np.zeros(dataset.p), mu, float(mu @ mu), 0.0, 1.0, int(support.size), "exact")
    res = variance_inference(y, fake, level, dof_adjust, check=False)
    return {"sigma_mu_sq": res["sigma_mu_sq"]["S"], "sigma_eps_sq": res["sigma_eps_sq"]["S"]}
