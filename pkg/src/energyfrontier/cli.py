"""Command-line interface.

Exit status: 0 on success, 1 on data or argument errors, 2 on numerical
failures. Every artifact carries the package version, the seed and a hash
of the run configuration (including a digest of the input file), and no
timestamps, so identical invocations produce identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .exceptions import ConvergenceError, DataError, NumericalError

THREADS_ENV = "ENERGYFRONTIER_THREADS"
log = logging.getLogger("energyfrontier")


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports errors through an exception instead of exiting with 2."""

    def error(self, message):
        raise _ArgumentError(f"{self.format_usage()}{self.prog}: error: {message}")


def _default_threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


# --------------------------------------------------------------------------
# artifact helpers


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _file_digest(path):
    if path is None:
        return None
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _run_config(args):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out_dir", "threads", "verbose")}
    for key in ("input", "plan", "reference"):
        if cfg.get(key) is not None:
            cfg[f"{key}_sha256"] = _file_digest(cfg[key])
            cfg[key] = Path(cfg[key]).name
    cfg = _clean(cfg)
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return cfg, hashlib.sha256(blob.encode()).hexdigest()[:16]


class _Writer:
    def __init__(self, args):
        self.out = Path(args.out_dir)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create output directory {self.out}: {exc}") from exc
        self.config, self.hash = _run_config(args)
        self.seed = getattr(args, "seed", None)
        self.written = []

    @property
    def meta(self):
        return {"version": __version__, "seed": self.seed, "config_hash": self.hash, "config": self.config}

    def json(self, name, payload):
        path = self.out / name
        body = {"meta": self.meta, **_clean(payload)}
        path.write_text(json.dumps(body, indent=2, allow_nan=False) + "\n")
        self.written.append(path)
        return path

    def csv(self, name, frame: pd.DataFrame, index=False):
        path = self.out / name
        header = f"# energyfrontier {__version__} seed={self.seed} config_hash={self.hash}\n"
        with open(path, "w", newline="") as fh:
            fh.write(header)
            frame.to_csv(fh, index=index, lineterminator="\n", float_format="%.17g")
        self.written.append(path)
        return path


# --------------------------------------------------------------------------
# shared loading


def _load_design(args):
    from .panel import SUBSETS, TransformPlan, apply_transforms, filter_subset, ingest_csv

    plan = TransformPlan.from_file(args.plan) if args.plan else TransformPlan.baseline()
    panel = ingest_csv(args.input, plan)
    if getattr(args, "subset", None):
        panel = filter_subset(panel, SUBSETS[args.subset])
    return panel, plan, apply_transforms(panel, plan)


def _sfa_spec(args):
    from .sfa import SfaSpec

    return SfaSpec(mundlak=getattr(args, "mundlak", False),
                   year_effects=not getattr(args, "no_year_effects", False))


def _coef_table(fit):
    se = fit.se
    rows = []
    k = len(fit.beta_names)
    for i, n in enumerate(fit.names):
        est = float(fit.params.to_vector()[i])
        s = None if se is None else float(se[i])
        eq = "frontier" if i < k else ("noise" if i == k else "inefficiency")
        name = n.split(":", 1)[1] if n.startswith("ineff:") else n
        rows.append({"equation": eq, "name": name, "estimate": est, "se": s,
                     "z": None if not s else est / s})
    return rows


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, w: _Writer):
    from .synth import DgpConfig, generate_dgp, truth_to_json

    cfg = DgpConfig(n_units=args.units, n_years=args.years, first_year=args.first_year, seed=args.seed)
    panel, truth = generate_dgp(cfg)
    frame = panel.frame.copy()
    w.csv("panel.csv", frame)
    w.json("truth.json", {"config": cfg.to_dict(), "truth": truth_to_json(truth),
                          "plan": cfg.plan().to_dict()})
    (w.out / "plan.toml").write_text(cfg.plan().to_toml())
    w.written.append(w.out / "plan.toml")


def cmd_sfa(args, w: _Writer):
    from .sfa import check_sign_predictions, fit_mle, variance_shares

    _, _, dm = _load_design(args)
    fit = fit_mle(dm, _sfa_spec(args), random_state=args.seed)
    vs = variance_shares(fit)
    try:
        signs = check_sign_predictions(fit)
    except KeyError:
        signs = []
    w.json("sfa_coefficients.json", {
        "coefficients": _coef_table(fit),
        "diagnostics": fit.diagnostics(),
        "variance_shares": vs.to_dict(),
        "sign_predictions": signs,
        "warnings": fit.warnings,
        "trace": fit.trace,
    })
    scores = pd.DataFrame({
        "state": fit.unit_ids,
        "year": fit.year_ids,
        "ln_q": fit.y,
        "frontier": fit.frontier,
        "residual": fit.residuals,
        "sigma_u": fit.sigma_u,
        "jlms": fit.jlms,
        "efficiency": fit.efficiency,
    })
    w.csv("sfa_scores.csv", scores)


def cmd_importance(args, w: _Writer):
    from .importance import ForestConfig, importance_report
    from .sfa import fit_mle

    _, _, dm = _load_design(args)
    fit = fit_mle(dm, _sfa_spec(args), random_state=args.seed)
    rep = importance_report(fit, dm, seed=args.seed, with_rf=not args.no_rf,
                            rf_config=ForestConfig(n_trees=args.trees, min_node=args.min_node),
                            n_jobs=args.threads)
    table = rep.to_frame()
    table["ci_low"] = np.nan
    table["ci_high"] = np.nan
    w.csv("importance.csv", table)
    w.json("importance.json", {
        "frontier_lmg_raw": rep.lmg.raw.to_dict(),
        "frontier_r2": rep.lmg.r2,
        "frontier_shares": rep.lmg.shares.to_dict(),
        "dropped": rep.lmg.dropped,
        "inefficiency_lmg_raw": rep.ineff_lmg.raw.to_dict(),
        "inefficiency_r2": rep.ineff_lmg.r2,
        "group_shares": None if rep.groups is None else rep.groups.to_dict(),
        "rf": None if rep.rf is None else rep.rf.normalized.to_dict(),
        "variance_shares": rep.shares,
        "unexplained_inefficiency": rep.combined.attrs["unexplained_inefficiency"],
        "fallback_count": rep.fallback_count,
        "combined": rep.combined.to_dict(orient="records"),
    })


def cmd_bootstrap(args, w: _Writer):
    from .bootstrap import BootstrapPlan, run_bootstrap

    panel, plan, _ = _load_design(args)
    stats = tuple(s.strip() for s in args.stats.split(",") if s.strip())
    try:
        bplan = BootstrapPlan(B=args.B, seed=args.seed, stats=stats, redemean=not args.no_redemean,
                              n_jobs=args.threads, rf_trees=args.trees)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    res = run_bootstrap(panel, plan, _sfa_spec(args), bplan, random_state=args.seed)
    draws = res.draws.copy()
    draws.insert(0, "converged", res.converged)
    draws.insert(0, "replicate", np.arange(len(draws)))
    w.csv("bootstrap_draws.csv", draws)
    w.json("bootstrap_ci.json", {
        "level": args.level,
        "B": args.B,
        "n_failed": res.n_failed,
        "failure_rate": res.failure_rate,
        "fallback_count": res.fallback_count,
        "failures": res.failures,
        "intervals": res.ci(args.level).to_dict(orient="records"),
    })


def cmd_lmdi(args, w: _Writer):
    from .lmdi import ClimateConfig, SectorSeries, lmdi_chained, lmdi_discrete

    series = SectorSeries.from_csv(args.input)
    ref = SectorSeries.from_csv(args.reference) if args.reference else None
    units = args.unit or ["all"]
    cfg = ClimateConfig.estimate(series, reference=ref)
    out, results, chains = [], {}, []
    for u in units:
        sub = series if u == "all" else series.for_unit(u)
        if len(sub.frame) == 0:
            raise DataError(f"unit {u!r} not in input")
        t0 = args.t0 if args.t0 is not None else sub.years[0]
        t1 = args.t1 if args.t1 is not None else sub.years[-1]
        res = lmdi_discrete(sub, t0, t1, cfg)
        fr = res.to_frame()
        fr.insert(0, "unit", u)
        out.append(fr)
        results[u] = res.to_dict()
        if args.chained:
            ch = lmdi_chained(sub, [t for t in sub.years if t0 <= t <= t1], cfg).reset_index()
            ch.insert(0, "unit", u)
            chains.append(ch)
    w.csv("lmdi.csv", pd.concat(out, ignore_index=True))
    if chains:
        w.csv("lmdi_chained.csv", pd.concat(chains, ignore_index=True))
    w.json("lmdi.json", {"climate": cfg.to_dict(), "results": results})


def cmd_scenario(args, w: _Writer):
    from .scenario import per_capita_amount, scenario_half_gap, scenario_policy_gap, scenario_price_convergence

    beta_p, beta_eff, e_u = args.beta_p, args.beta_eff, args.expected_u
    if args.from_fit:
        try:
            doc = json.loads(Path(args.from_fit).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read fit file {args.from_fit}: {exc}") from exc
        coefs = {(c["equation"], c["name"]): c["estimate"] for c in doc.get("coefficients", [])}
        beta_p = coefs.get(("frontier", "price"), beta_p)
        beta_eff = coefs.get(("frontier", "eff"), beta_eff)
        e_u = doc.get("diagnostics", {}).get("expected_u_at_mean_z", e_u)
    price = scenario_price_convergence(args.p_current, args.p_target, beta_p)
    lin, exact = scenario_policy_gap(args.delta, beta_eff)
    half = scenario_half_gap(e_u)
    payload = {
        "inputs": {"p_current": args.p_current, "p_target": args.p_target, "beta_p": beta_p,
                   "delta": args.delta, "beta_eff": beta_eff, "expected_u": e_u, "mean_use": args.mean_use},
        "price_convergence": price,
        "policy_gap_linear": lin,
        "policy_gap_exact": exact,
        "half_gap": half,
        "half_gap_per_capita": per_capita_amount(half, args.mean_use),
    }
    w.json("scenario.json", payload)
    print(json.dumps(_clean({k: v for k, v in payload.items() if k != "inputs"}), indent=2))


# --------------------------------------------------------------------------
# parser


def _common(p, data=True):
    p.add_argument("--out-dir", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=0, help="master seed recorded in every artifact")
    p.add_argument("-v", "--verbose", action="store_true")
    if data:
        p.add_argument("--input", required=True, help="panel CSV")
        p.add_argument("--plan", help="transform plan (.toml or .json); default: built-in plan")
        p.add_argument("--subset", choices=["excl_fossil", "excl_crisis", "excl_industrial", "early", "recent"])
        p.add_argument("--mundlak", action="store_true", help="add unit means of frontier regressors")
        p.add_argument("--no-year-effects", action="store_true")


def build_parser():
    parser = _Parser(prog="energyfrontier", description="Energy-demand frontier toolkit.",
                     epilog=f"Default worker count is read from ${THREADS_ENV} (default 1).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("lmdi", help="LMDI decomposition of sectoral energy use")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--input", required=True, help="long CSV: state, year, sector, energy_pc, activity_pc, hdd, cdd")
    p.add_argument("--reference", help="CSV supplying the climate reference levels (default: input)")
    p.add_argument("--unit", action="append", help="decompose a single unit (repeatable); default: aggregate")
    p.add_argument("--t0", type=int)
    p.add_argument("--t1", type=int)
    p.add_argument("--chained", action="store_true", help="also write chained year-on-year indices")
    p.set_defaults(func=cmd_lmdi)

    p = sub.add_parser("sfa", help="fit the stochastic frontier")
    _common(p)
    p.set_defaults(func=cmd_sfa)

    p = sub.add_parser("importance", help="LMG and random-forest importance of the fitted frontier")
    _common(p)
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--min-node", type=int, default=5)
    p.add_argument("--no-rf", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("bootstrap", help="state-level block bootstrap")
    _common(p)
    p.add_argument("--B", type=int, default=500, help="replications (default 500)")
    p.add_argument("--stats", default="sfa,variance",
                   help="comma list from: sfa, variance, diagnostics, lmg, rf, scenario")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--trees", type=int, default=500, help="trees per replicate when rf is requested")
    p.add_argument("--no-redemean", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="generate a synthetic panel with known truth")
    _common(p, data=False)
    p.add_argument("--units", type=int, default=51)
    p.add_argument("--years", type=int, default=17)
    p.add_argument("--first-year", type=int, default=2006)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scenario", help="policy scenario calculators")
    _common(p, data=False)
    p.add_argument("--from-fit", help="sfa_coefficients.json supplying beta_p, beta_eff and E[u]")
    p.add_argument("--p-current", type=float, default=21.71)
    p.add_argument("--p-target", type=float, default=25.51)
    p.add_argument("--beta-p", type=float, default=-0.97)
    p.add_argument("--delta", type=float, default=25.0, help="policy-index gap in points")
    p.add_argument("--beta-eff", type=float, default=-0.0019)
    p.add_argument("--expected-u", type=float, default=0.11)
    p.add_argument("--mean-use", type=float, default=343.3, help="mean use for per-capita conversion")
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if hasattr(args, "threads") and args.threads is None:
            args.threads = _default_threads()
        w = _Writer(args)
        args.func(args, w)
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        for step in exc.trace or []:
            print("  " + json.dumps(_clean(step)), file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1
    for path in w.written:
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
