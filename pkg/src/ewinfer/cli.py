"""Command-line front end.

Every command writes ``result.json`` (or a report) into ``--out`` and echoes
the full effective configuration, so ``--config <out>/result.json`` replays
the run exactly. Failures exit nonzero with a JSON error object on stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND
from ._rng import derive_seed
from .exact import EwConfig, exact_ew_fit
from .io import load_dataset, to_jsonable, write_json
from .pipeline import PipelineConfig, _cv_runner, infer_beta, infer_variance, make_grid
from .sampler import SamplerConfig, run_chain, write_trace_csv
from .simgen import Scenario, run_scenario
from .tuning import cross_validate

log = logging.getLogger("ewinfer")

COMMANDS = ("fit-beta", "fit-variance", "tune", "simulate", "oracle-check")
_PIPELINE_KEYS = {f.name for f in fields(PipelineConfig)}
# desk-scale sampler lengths used by ``simulate`` unless overridden
SIM_T0, SIM_T = 1000, 4000


class UsageError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _seed(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ewinfer", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ewinfer {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config (a previous result.json also works)")
        p.add_argument("--seed", type=_seed)
        p.add_argument("--threads", type=int, help="worker threads (default: EWINFER_THREADS or all cores)")
        p.add_argument("--out", help="output directory (default: .)")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--exact", dest="mode", action="store_const", const="exact")
        g.add_argument("--mcmc", dest="mode", action="store_const", const="mcmc")
        p.add_argument("--dof-adjust", type=_bool, metavar="BOOL")
        p.add_argument("--level", type=float)
        p.add_argument("--alpha", type=float, help="fix the temperature (skips its tuning)")
        p.add_argument("--u", type=int, help="fix the model size (skips its tuning)")
        p.add_argument("--t0", type=int, help="burn-in steps")
        p.add_argument("--t", type=int, help="kept steps")
        p.add_argument("--restarts", type=int)
        p.add_argument("-v", "--verbose", action="count", default=0)

    def data(p, x_required):
        p.add_argument("--data", help="CSV with a 'y' column")
        p.add_argument("--x", dest="x_columns", help="comma-separated focal column names"
                       + (" (required)" if x_required else ""))

    p = sub.add_parser("fit-beta", help="point estimate and confidence set for beta")
    common(p)
    data(p, True)
    p.add_argument("--correlated", type=_bool, metavar="BOOL",
                   help="correlated Gaussian errors: interval from the average error variance")
    p.add_argument("--beta-variant", choices=("S", "M", "L"))
    p.add_argument("--trace", action="store_true", help="write per-step CSV traces of sampled fits")

    p = sub.add_parser("fit-variance", help="signal strength and noise level")
    common(p)
    data(p, False)
    p.add_argument("--trace", action="store_true")

    p = sub.add_parser("tune", help="cross-validation table for (alpha, u)")
    common(p)
    data(p, False)
    p.add_argument("--target", help="column to regress on the nuisance design (default y)")

    p = sub.add_parser("simulate", help="Monte Carlo coverage study")
    common(p)
    p.add_argument("--scenario", help="scenario JSON (default: bundled desk-scale scenario)")
    p.add_argument("--reps", type=int, help="override the scenario replication count")

    p = sub.add_parser("oracle-check", help="compare sampled and exact fits on small problems")
    common(p)
    p.add_argument("--instances", type=int)
    return ap


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _load_config(path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if "config" in cfg and isinstance(cfg["config"], dict):
        cfg = cfg["config"]  # a previous result.json
    return cfg


def resolve_config(args) -> dict:
    """File config, then flag overrides; returns the full effective config."""
    cfg = _load_config(args.config) if args.config else {}
    if cfg.get("command", args.command) != args.command:
        raise UsageError(f"config is for {cfg['command']!r}, not {args.command!r}")
    pipe = dict(cfg.get("pipeline", {}))
    unknown = set(pipe) - _PIPELINE_KEYS
    if unknown:
        raise UsageError(f"unknown pipeline keys: {sorted(unknown)}")
    # defaults specific to the CLI
    pipe.setdefault("dof_adjust", True)
    if args.command == "simulate":
        pipe.setdefault("t0", SIM_T0)
        pipe.setdefault("t", SIM_T)
    flag_map = {"mode": "mode", "dof_adjust": "dof_adjust", "level": "level", "alpha": "alpha",
                "u": "u", "t0": "t0", "t": "t", "restarts": "restarts",
                "correlated": "correlated", "beta_variant": "beta_variant"}
    for attr, key in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            pipe[key] = v
    if getattr(args, "trace", False):
        pipe["trace"] = True
    pipe.pop("threads", None)
    eff = PipelineConfig(**pipe).to_dict()
    eff.pop("threads")

    out = {"command": args.command, "seed": int(cfg.get("seed", 0)), "pipeline": eff}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.command in ("fit-beta", "fit-variance", "tune"):
        out["data"] = args.data or cfg.get("data")
        if not out["data"]:
            raise UsageError("--data is required")
        xs = args.x_columns.split(",") if args.x_columns else cfg.get("x_columns", [])
        out["x_columns"] = [c.strip() for c in xs if c.strip()]
        if args.command == "fit-beta" and not out["x_columns"]:
            raise UsageError("fit-beta needs at least one focal column (--x)")
    if args.command == "tune":
        out["target"] = args.target or cfg.get("target", "y")
    if args.command == "simulate":
        sc = cfg.get("scenario")
        if args.scenario:
            sc = Scenario.from_json(args.scenario).to_dict()
        elif sc is None:
            sc = bundled_scenario().to_dict()
        if args.reps is not None:
            sc = {**sc, "reps": args.reps}
        out["scenario"] = Scenario.from_dict(sc).to_dict()
    if args.command == "oracle-check":
        out["instances"] = args.instances or cfg.get("instances", 5)
    return out


def resolve_threads(flag) -> int:
    if flag is not None:
        return max(int(flag), 1)
    env = os.environ.get("EWINFER_THREADS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def bundled_scenario(name: str = "desk_beta") -> Scenario:
    text = resources.files("ewinfer").joinpath("scenarios", f"{name}.json").read_text()
    return Scenario.from_dict(json.loads(text))


def _versions() -> dict:
    import scipy
    return {"ewinfer": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "kernel": BACKEND}


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _strip_chains(diag: dict) -> dict:
    return {k: v for k, v in diag.items() if k != "chains"}


def _fit_summary(fit) -> dict:
    return {"mode": fit.mode, "alpha": fit.alpha, "u": fit.u,
            "mean_fit_sq": fit.mean_fit_sq, "coef": fit.coef,
            "diagnostics": _strip_chains(fit.diagnostics)}


def _write_traces(outdir: Path, fits: dict) -> list[str]:
    written = []
    for name, fit in fits.items():
        for r, chain in enumerate(fit.diagnostics.get("chains", [])):
            path = outdir / f"trace_{name}_{r}.csv"
            write_trace_csv(path, chain)
            written.append(path.name)
    return written


def cmd_fit_beta(cfg, pcfg, outdir) -> tuple[dict, str]:
    ds = load_dataset(cfg["data"], cfg["x_columns"])
    res = infer_beta(ds, pcfg, cfg["seed"])
    variant = "S" if pcfg.correlated else pcfg.beta_variant
    inf = {}
    for v, bi in res.inference.items():
        inf[v] = {"sigma_eps_sq": bi.sigma_eps_hat, "interval": bi.interval,
                  "region": {"center": bi.region.center, "shape": bi.region.shape,
                             "radius_sq": bi.region.radius_sq, "bounds": bi.region.bounds()}}
    result = {
        "n": ds.n, "p": ds.p, "q": ds.q, "x_columns": cfg["x_columns"],
        "beta_hat": res.beta_hat, "sigma_h_hat": res.sigma_h_hat,
        "default_variant": variant, "inference": inf, "dbar_hat": res.dbar_hat,
        "tuning": res.tuning,
        "fits": {"theta": _fit_summary(res.theta), "mu": _fit_summary(res.mu),
                 "delta": [_fit_summary(f) for f in res.deltas]},
    }
    if pcfg.trace:
        fits = {"theta": res.theta, "mu": res.mu, **{f"delta{j}": f for j, f in enumerate(res.deltas)}}
        result["traces"] = _write_traces(outdir, fits)
    lines = [f"n={ds.n} p={ds.p} q={ds.q}  level={pcfg.level}  variant={variant}"]
    for j, name in enumerate(cfg["x_columns"]):
        b = res.inference[variant].region.bounds()[j]
        lines.append(f"  {name:<12} beta_hat={res.beta_hat[j]: .6f}  [{b[0]: .6f}, {b[1]: .6f}]")
    return result, "\n".join(lines)


def cmd_fit_variance(cfg, pcfg, outdir) -> tuple[dict, str]:
    ds = load_dataset(cfg["data"], cfg["x_columns"])
    res = infer_variance(ds, pcfg, cfg["seed"])
    out, lines = {}, [f"n={ds.n} p={ds.p} q={ds.q}  level={pcfg.level}"]
    for comp in ("sigma_mu_sq", "sigma_eps_sq"):
        out[comp] = {}
        for v, vi in getattr(res, comp).items():
            out[comp][v] = {"estimate": vi.estimate, "kappa_hat": vi.kappa_hat,
                            "interval": vi.interval, "dof_adjusted": vi.dof_adjusted}
            lines.append(f"  {comp:<13}{v}  {vi.estimate: .6f}  [{vi.interval[0]: .6f}, {vi.interval[1]: .6f}]")
    result = {"n": ds.n, "p": ds.p, "q": ds.q, **out, "tuning": res.tuning,
              "fits": {"mu": _fit_summary(res.mu)}}
    if pcfg.trace:
        result["traces"] = _write_traces(outdir, {"mu": res.mu})
    return result, "\n".join(lines)


def cmd_tune(cfg, pcfg, outdir) -> tuple[dict, str]:
    ds = load_dataset(cfg["data"], cfg["x_columns"])
    if cfg["target"] == "y":
        target = ds.y
    elif cfg["target"] in cfg["x_columns"]:
        target = ds.x[:, cfg["x_columns"].index(cfg["target"])]
    else:
        raise UsageError(f"tune target {cfg['target']!r} must be 'y' or a focal column")
    grid = make_grid(ds.z, target, pcfg, derive_seed(cfg["seed"], 4))
    res = cross_validate(ds.z, target, grid, _cv_runner(pcfg), pcfg.threads)
    res.write_csv(outdir / "cv_scores.csv")
    lines = [f"{'alpha':>14}{'u':>5}{'cv_mse':>14}{'cv_se':>12}"]
    for r in res.table:
        mark = " *" if (r["alpha"], r["u"]) == (res.alpha, res.u) else ""
        lines.append(f"{r['alpha']:>14.6g}{r['u']:>5}{r['cv_mse']:>14.6g}{r['cv_se']:>12.4g}{mark}")
    return {"alpha": res.alpha, "u": res.u, "table": res.table, "csv": "cv_scores.csv"}, "\n".join(lines)


def cmd_simulate(cfg, pcfg, outdir) -> tuple[dict, str]:
    sc = Scenario.from_dict(cfg["scenario"])
    report = run_scenario(sc, pcfg, threads=pcfg.threads)
    summary = report.summary()
    with open(outdir / "coverage.csv", "w") as fh:
        fh.write("method,AvgCov,AvgCovSE,AvgLen,MeanEstimate,reps\n")
        for m, s in summary.items():
            ln = "" if s["avg_len"] is None else repr(s["avg_len"])
            me = "" if s["mean_estimate"] is None else repr(s["mean_estimate"])
            fh.write(f"{m},{s['avg_cov']!r},{s['avg_cov_se']!r},{ln},{me},{s['reps']}\n")
    write_json(outdir / "coverage.json", report.to_dict())
    text = report.table()
    if report.failures:
        text += f"\n{len(report.failures)} replication(s) failed; see coverage.json"
    return {"summary": summary, "failures": report.failures,
            "files": ["coverage.csv", "coverage.json"]}, text


def oracle_check(instances: int, seed: int, pcfg: PipelineConfig, n: int = 40, p: int = 8,
                 u: int = 2, t0: int = 5000, t: int = 200_000, restarts: int = 3) -> list[dict]:
    """Exact vs sampled fits on random Gaussian problems small enough to enumerate."""
    rows = []
    for k in range(instances):
        rng = np.random.default_rng(derive_seed(seed, k))
        z = rng.standard_normal((n, p))
        y = z[:, :2] @ np.array([1.0, -0.5]) + rng.standard_normal(n)
        alpha = 4.0
        ew = EwConfig(alpha, u)
        ex = exact_ew_fit(z, y, ew)
        mc = run_chain(z, y, ew, SamplerConfig(t0, t, derive_seed(seed, k, 1), restarts))
        scale = max(float(np.max(np.abs(ex.coef))), 1.0)
        rows.append({
            "instance": k,
            "coef_max_abs_dev": float(np.max(np.abs(mc.coef - ex.coef))),
            "coef_tolerance": 0.02 * scale,
            "mean_fit_sq_rel_dev": abs(mc.mean_fit_sq - ex.mean_fit_sq) / ex.mean_fit_sq,
        })
    return rows


def cmd_oracle_check(cfg, pcfg, outdir) -> tuple[dict, str]:
    rows = oracle_check(cfg["instances"], cfg["seed"], pcfg)
    worst = max(r["coef_max_abs_dev"] for r in rows)
    worst_rel = max(r["mean_fit_sq_rel_dev"] for r in rows)
    ok = all(r["coef_max_abs_dev"] <= r["coef_tolerance"] and r["mean_fit_sq_rel_dev"] <= 0.02
             for r in rows)
    text = (f"max coefficient deviation {worst:.3g}; max mean_fit_sq relative deviation "
            f"{worst_rel:.3g}; {'PASS' if ok else 'FAIL'}")
    return {"instances": rows, "max_coef_dev": worst, "max_mean_fit_sq_rel_dev": worst_rel,
            "pass": ok}, text


HANDLERS = {
    "fit-beta": cmd_fit_beta,
    "fit-variance": cmd_fit_variance,
    "tune": cmd_tune,
    "simulate": cmd_simulate,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    outdir = Path(args.out or ".")
    try:
        cfg = resolve_config(args)
        threads = resolve_threads(args.threads)
        pcfg = PipelineConfig(**cfg["pipeline"], threads=threads)
        outdir.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        result, text = HANDLERS[args.command](cfg, pcfg, outdir)
        payload = {
            "config": cfg,
            "seed": cfg["seed"],
            "versions": _versions(),
            "threads": threads,
            "elapsed_seconds": time.perf_counter() - start,
            "result": result,
        }
        write_json(outdir / "result.json", payload)
        print(text)
        if args.command == "oracle-check" and not result["pass"]:
            return 1
        return 0
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(to_jsonable(err)))
        log.debug("failure", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
