"""Synthetic designs and Monte Carlo coverage studies.

Designs are equi-correlated with the same (unit-variance) base law as the
errors; mean vectors are exactly or approximately sparse in the design.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ._parallel import pmap
from ._rng import derive_rng, derive_seed
from .linalg import Dataset
from .pipeline import (
    PipelineConfig,
    infer_beta,
    infer_variance,
    oracle_beta,
    oracle_variance,
)

log = logging.getLogger(__name__)

DISTRIBUTIONS = ("gaussian", "double_exponential", "t3")


class InfeasibleSparsity(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    n: int = 100
    p: int = 150
    q: int = 1
    dist: str = "gaussian"
    rho: float = 0.0
    s_gamma: int = 3
    s_delta: int = 3
    beta: tuple = (1.0,)
    snr_x: float = 2.0
    sigma_mu_sq: float = 2.0
    kappa_exp: float = 2.0
    strong_sparse: bool = False
    reps: int = 200
    level: float = 0.95
    seed: int = 0
    target: str = "beta"  # "beta" | "variance"
    error_corr: float = 0.0  # AR(1) correlation of the errors (Gaussian only)
    error_scale: float = 1.0  # trace(Sigma_eps) / n

    def __post_init__(self):
        if self.dist not in DISTRIBUTIONS:
            raise ValueError(f"dist must be one of {DISTRIBUTIONS}")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must be in [0, 1)")
        if not (0 < self.s_gamma < self.p and 0 <= self.s_delta < self.p):
            raise ValueError("sparsities must be below p")
        if self.target not in ("beta", "variance"):
            raise ValueError("target must be 'beta' or 'variance'")
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        if self.q and len(beta) == 1 and self.q > 1:
            beta = beta * self.q
        if len(beta) != self.q:
            raise ValueError(f"beta has {len(beta)} entries, q={self.q}")
        object.__setattr__(self, "beta", beta)
        if self.error_corr and self.dist != "gaussian":
            raise ValueError("correlated errors are Gaussian only")

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = list(self.beta)
        return d

    @property
    def sigma_eta_sq(self) -> float:
        return 1.0 / (1.0 + self.snr_x)

    @property
    def sigma_nu_sq(self) -> float:
        return self.snr_x / (1.0 + self.snr_x)


def base_draw(dist: str, rng: np.random.Generator, size) -> np.ndarray:
    """Mean-zero, unit-variance draws from the named base law."""
    if dist == "gaussian":
        return rng.standard_normal(size)
    if dist == "double_exponential":
        return rng.laplace(0.0, 1.0, size) / math.sqrt(2.0)
    if dist == "t3":
        return rng.standard_t(3, size) / math.sqrt(3.0)
    raise ValueError(f"unknown distribution {dist!r}")


def equicorrelated(dist: str, rho: float, n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """Rows with covariance ``(1 - rho) I + rho 11^T`` via a shared factor."""
    e = base_draw(dist, rng, (n, p))
    if rho == 0:
        return e
    f = base_draw(dist, rng, (n, 1))
    return math.sqrt(1.0 - rho) * e + math.sqrt(rho) * f


def quad_form_equicorr(v: np.ndarray, rho: float) -> float:
    """``v^T [(1 - rho) I + rho 11^T] v``."""
    return float((1.0 - rho) * (v @ v) + rho * v.sum() ** 2)


def sample_design(sc: Scenario, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Design ``z`` and the focal noise ``h`` (n x q, equi-correlation 0.5 when q > 1)."""
    z = equicorrelated(sc.dist, sc.rho, sc.n, sc.p, rng)
    h = np.zeros((sc.n, sc.q))
    if sc.q:
        rho_h = 0.5 if sc.q > 1 else 0.0
        h = math.sqrt(sc.sigma_eta_sq) * equicorrelated(sc.dist, rho_h, sc.n, sc.q, rng)
    return z, h


def _residual_variance(coef: np.ndarray, support: np.ndarray, rho: float) -> float:
    """Variance of ``z coef`` left after the best linear predictor from ``z_S``."""
    p = coef.size
    sigma_col = (1 - rho) * coef + rho * coef.sum()  # Sigma @ coef
    total = float(coef @ sigma_col)
    if support.size == 0:
        return total
    s_ss = (1 - rho) * np.eye(support.size) + rho
    b = sigma_col[support]
    return max(total - float(b @ np.linalg.solve(s_ss, b)), 0.0)


def sparse_vector(p: int, s: int, target_var: float, rho: float, strong: bool,
                  kappa: float, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient vector with ``v^T Sigma v = target_var`` and its (weakly) sparse set."""
    if s == 0 or target_var == 0:
        return np.zeros(p), np.zeros(0, dtype=np.int64)
    if strong:
        support = np.sort(rng.choice(p, size=s, replace=False))
        v = np.zeros(p)
        v[support] = rng.uniform(-1.0, 1.0, s)
    else:
        perm = rng.permutation(p)  # perm[j] = rank of coordinate j (0-based)
        v = (perm + 1.0) ** (-kappa)
        v *= rng.choice([-1.0, 1.0], size=p)
        support = np.sort(np.flatnonzero(perm < s))
    v *= math.sqrt(target_var / quad_form_equicorr(v, rho))
    if not strong:
        tail = _residual_variance(v, support, rho)
        if tail > n ** -0.5:
            raise InfeasibleSparsity(
                f"tail variance {tail:.4g} exceeds n^-1/2 = {n ** -0.5:.4g}; "
                f"increase kappa_exp (now {kappa}) or s"
            )
    return v, support


def sample_coefficients(sc: Scenario, rng: np.random.Generator):
    """``(gamma, S_gamma, Delta, [S_delta_j])`` for the scenario."""
    gamma, s_g = sparse_vector(sc.p, sc.s_gamma, sc.sigma_mu_sq, sc.rho, sc.strong_sparse,
                               sc.kappa_exp, sc.n, rng)
    delta = np.zeros((sc.p, sc.q))
    s_d = []
    for j in range(sc.q):
        d, sd = sparse_vector(sc.p, sc.s_delta, sc.sigma_nu_sq, sc.rho, sc.strong_sparse,
                              sc.kappa_exp, sc.n, rng)
        delta[:, j] = d
        s_d.append(sd)
    return gamma, s_g, delta, s_d


def ar1_cholesky(n: int, phi: float, scale: float) -> np.ndarray:
    idx = np.arange(n)
    cov = scale * phi ** np.abs(idx[:, None] - idx[None, :])
    return np.linalg.cholesky(cov)


@dataclass
class Replicate:
    dataset: Dataset
    gamma: np.ndarray
    support_gamma: np.ndarray
    delta: np.ndarray
    support_delta: list
    mu: np.ndarray


def generate(sc: Scenario, rng: np.random.Generator) -> Replicate:
    z, h = sample_design(sc, rng)
    gamma, s_g, delta, s_d = sample_coefficients(sc, rng)
    mu = z @ gamma
    x = z @ delta + h
    if sc.error_corr:
        eps = ar1_cholesky(sc.n, sc.error_corr, sc.error_scale) @ rng.standard_normal(sc.n)
    else:
        eps = math.sqrt(sc.error_scale) * base_draw(sc.dist, rng, sc.n)
    y = x @ np.asarray(sc.beta) + mu + eps
    return Replicate(Dataset(y, x, z), gamma, s_g, delta, s_d, mu)


# --------------------------------------------------------------------------
# coverage
# --------------------------------------------------------------------------


@dataclass
class CoverageReport:
    """Coverage and interval length per method over the replications."""

    methods: list
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    scenario: dict = field(default_factory=dict)

    def summary(self) -> dict[str, dict]:
        out = {}
        for m in self.methods:
            rows = [r for r in self.records if r["method"] == m]
            k = len(rows)
            cov = sum(r["covered"] for r in rows) / k if k else float("nan")
            lens = [r["length"] for r in rows if r.get("length") is not None]
            ests = [r["estimate"] for r in rows if r.get("estimate") is not None]
            out[m] = {
                "reps": k,
                "avg_cov": cov,
                "avg_cov_se": math.sqrt(cov * (1 - cov) / k) if k else float("nan"),
                "avg_len": float(np.mean(lens)) if lens else None,
                "mean_estimate": float(np.mean(ests)) if ests else None,
            }
        return out

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "summary": self.summary(),
            "failures": self.failures,
            "records": self.records,
        }

    def table(self) -> str:
        lines = [f"{'method':<14}{'AvgCov':>10}{'SE':>8}{'AvgLen':>10}{'Mean':>10}{'reps':>6}"]
        for m, s in self.summary().items():
            ln = "" if s["avg_len"] is None else f"{s['avg_len']:.4f}"
            me = "" if s["mean_estimate"] is None else f"{s['mean_estimate']:.4f}"
            lines.append(f"{m:<14}{s['avg_cov']:>10.3f}{s['avg_cov_se']:>8.3f}{ln:>10}{me:>10}{s['reps']:>6}")
        return "\n".join(lines)


_EW_NAMES = {"S": "EW_I", "M": "EW_II", "L": "EW_III"}


def _beta_records(sc: Scenario, rep: Replicate, cfg: PipelineConfig, seed: int, idx: int):
    truth = np.asarray(sc.beta)
    res = infer_beta(rep.dataset, cfg, seed)
    recs = []
    variants = ("S",) if cfg.correlated else ("S", "M", "L")
    for v in variants:
        inf = res.inference[v]
        name = "EW_dbar" if cfg.correlated else _EW_NAMES[v]
        recs.append({
            "rep": idx, "method": name, "covered": bool(inf.covers(truth)),
            "length": None if inf.interval is None else inf.interval[1] - inf.interval[0],
            "estimate": float(res.beta_hat[0]) if sc.q == 1 else None,
        })
    if cfg.correlated:
        recs.append({"rep": idx, "method": "dbar", "covered": False, "length": None,
                     "estimate": float(res.dbar_hat)})
    support = sorted(set(rep.support_gamma.tolist()).union(*[set(s.tolist()) for s in rep.support_delta]))
    ls = oracle_beta(rep.dataset, support, cfg.level)
    recs.append({
        "rep": idx, "method": "LS", "covered": bool(ls.covers(truth)),
        "length": None if ls.interval is None else ls.interval[1] - ls.interval[0],
        "estimate": float(ls.beta_hat[0]) if sc.q == 1 else None,
    })
    return recs


def _variance_records(sc: Scenario, rep: Replicate, cfg: PipelineConfig, seed: int, idx: int):
    res = infer_variance(rep.dataset, cfg, seed)
    truths = {"sigma_mu_sq": sc.sigma_mu_sq, "sigma_eps_sq": sc.error_scale}
    recs = []
    for comp, short in (("sigma_mu_sq", "mu"), ("sigma_eps_sq", "eps")):
        for v in ("S", "M", "L"):
            inf = getattr(res, comp)[v]
            recs.append({"rep": idx, "method": f"{_EW_NAMES[v]}:{short}",
                         "covered": bool(inf.covers(truths[comp])),
                         "length": inf.length, "estimate": inf.estimate})
    ls = oracle_variance(rep.dataset, rep.support_gamma, cfg.level, cfg.dof_adjust)
    for comp, short in (("sigma_mu_sq", "mu"), ("sigma_eps_sq", "eps")):
        inf = ls[comp]
        recs.append({"rep": idx, "method": f"LS:{short}", "covered": bool(inf.covers(truths[comp])),
                     "length": inf.length, "estimate": inf.estimate})
    return recs


def method_names(sc: Scenario, cfg: PipelineConfig) -> list[str]:
    if sc.target == "variance":
        return [f"{m}:{c}" for c in ("mu", "eps") for m in ("EW_I", "EW_II", "EW_III", "LS")]
    if cfg.correlated:
        return ["EW_dbar", "dbar", "LS"]
    return ["EW_I", "EW_II", "EW_III", "LS"]


def run_replicate(sc: Scenario, cfg: PipelineConfig, idx: int) -> list[dict]:
    rng = derive_rng(sc.seed, idx, 0)
    rep = generate(sc, rng)
    seed = derive_seed(sc.seed, idx, 1)
    if sc.target == "beta":
        return _beta_records(sc, rep, cfg, seed, idx)
    return _variance_records(sc, rep, cfg, seed, idx)


def run_scenario(sc: Scenario, cfg: PipelineConfig, threads: int | None = None,
                 progress=None) -> CoverageReport:
    """Replicate the scenario ``sc.reps`` times; failures are recorded, not raised."""
    cfg_inner = PipelineConfig(**{**cfg.to_dict(), "level": sc.level, "threads": 1})

    def one(idx):
        try:
            out = run_replicate(sc, cfg_inner, idx)
        except Exception as exc:  # noqa: BLE001 - per-rep failures are data
            log.warning("replicate %d failed: %s", idx, exc)
            out = {"rep": idx, "error": f"{type(exc).__name__}: {exc}"}
        if progress is not None:
            progress(idx)
        return out

    results = pmap(one, range(sc.reps), threads)
    report = CoverageReport(method_names(sc, cfg), scenario=sc.to_dict())
    for out in results:
        if isinstance(out, dict):
            report.failures.append(out)
        else:
            report.records.extend(out)
    return report
