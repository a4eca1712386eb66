"""State-level block bootstrap.

Whole units are resampled with replacement, keeping each unit's time series
intact; a unit drawn twice becomes two distinct clusters. Replicate ``b``
draws from ``default_rng([seed, b])``, so the draws depend only on the
master seed and ``b``, not on scheduling or worker count. Failed replicates
stay in the draw matrix as missing rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .exceptions import BootstrapFailureError, DataError, NumericalError
from .panel import DesignMatrix, Panel, TransformPlan, apply_transforms, year_dummies
from .scenario import scenario_half_gap, scenario_policy_gap, scenario_price_convergence
from .sfa.diagnostics import variance_shares
from .sfa.estimator import SfaFit, SfaSpec, fit_mle

log = logging.getLogger(__name__)

STATISTICS = ("sfa", "variance", "diagnostics", "lmg", "rf", "scenario")


def resample_states(unit_ids, rng) -> list:
    """Draw ``G`` units with replacement from the ``G`` distinct ids (sorted)."""
    units = np.unique(np.asarray(unit_ids))
    if units.size < 2:
        raise DataError("need at least two units to resample")
    return list(units[rng.integers(0, units.size, size=units.size)])


def percentile_ci(draws, level=0.95):
    """Percentile interval over non-missing draws.

    Quantiles interpolate linearly between order statistics at position
    ``q (n - 1)`` (zero-based), the usual type-7 rule.
    """
    x = np.asarray(draws, dtype=np.float64).ravel()
    x = x[~np.isnan(x)]
    if x.size == 0:
        raise DataError("all bootstrap draws are missing")
    if x.size < 2:
        raise DataError("need at least two non-missing draws")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    a = 0.5 * (1.0 - level)
    lo, hi = np.quantile(x, [a, 1.0 - a], method="linear")
    return float(lo), float(hi)


@dataclass(frozen=True)
class ScenarioInputs:
    p_current: float = 21.71
    p_target: float = 25.51
    policy_gap: float = 25.0
    price: str = "price"
    policy: str = "eff"


@dataclass(frozen=True)
class BootstrapPlan:
    """Replication settings.

    ``stats`` is any subset of ``sfa, variance, diagnostics, lmg, rf,
    scenario``. With ``redemean`` the pooled-mean centring of the transform
    plan is recomputed inside each replicate.
    """

    B: int = 500
    seed: int = 0
    stats: tuple[str, ...] = ("sfa", "variance")
    redemean: bool = True
    n_jobs: int = 1
    max_failure_rate: float = 0.2
    rf_trees: int = 500
    scenario: ScenarioInputs = field(default_factory=ScenarioInputs)

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if not self.stats:
            raise ValueError("statistic set is empty")
        bad = [s for s in self.stats if s not in STATISTICS]
        if bad:
            raise ValueError(f"unknown statistic(s) {bad}; choose from {STATISTICS}")


@dataclass
class BootstrapResult:
    draws: pd.DataFrame        # B rows, NaN rows for failed replicates
    converged: np.ndarray
    point: pd.Series
    fallback_count: int
    plan: BootstrapPlan
    failures: list = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return int((~self.converged).sum())

    @property
    def failure_rate(self) -> float:
        return self.n_failed / len(self.converged)

    def ci(self, level=0.95) -> pd.DataFrame:
        rows = []
        for c in self.draws.columns:
            col = self.draws[c].to_numpy(dtype=np.float64)
            n_ok = int(np.sum(~np.isnan(col)))
            lo = hi = np.nan
            if n_ok >= 2:
                lo, hi = percentile_ci(col, level)
            rows.append({"statistic": c, "estimate": float(self.point.get(c, np.nan)),
                         "ci_low": lo, "ci_high": hi, "n_valid": n_ok})
        return pd.DataFrame(rows)


# --------------------------------------------------------------------------
# replicate construction


class _ReplicateBuilder:
    """Rebuilds the design matrix of a resampled panel by row indexing.

    Equivalent to :func:`~energyfrontier.panel.relabel_units` followed by
    :func:`~energyfrontier.panel.apply_transforms`, without the DataFrame
    round trip.
    """

    def __init__(self, panel: Panel, plan: TransformPlan, redemean=True):
        self.base = apply_transforms(panel, plan)
        self.plan = plan
        self.redemean = redemean
        uncentred = TransformPlan(
            tuple(replace(c, center="none") for c in plan.columns), plan.unit_col, plan.year_col
        )
        self.raw = apply_transforms(panel, uncentred) if redemean else self.base
        self.centre = [c.name for c in plan.columns if c.center == "pooled-mean" and "id" not in c.roles]
        ids = self.base.unit_ids
        self.rows = {u: np.flatnonzero(ids == u) for u in np.unique(ids)}

    def build(self, draw) -> DesignMatrix:
        # sorted so rows come out in the order a rebuilt Panel would use
        draw = sorted(draw)
        idx = np.concatenate([self.rows[u] for u in draw])
        seen = {}
        labels = []
        for u in draw:
            k = seen.get(u, 0)
            seen[u] = k + 1
            labels += [f"{u}#{k}"] * len(self.rows[u])
        src = self.raw
        y = src.y[idx].copy()
        X = src.X.iloc[idx].reset_index(drop=True)
        Z = src.Z.iloc[idx].reset_index(drop=True)
        if self.redemean:
            for frame in (X, Z):
                for c in frame.columns:
                    if c in self.centre:
                        v = frame[c].to_numpy(dtype=np.float64)
                        v = v - v.mean()
                        frame[c] = v - v.mean()
            if self.plan.response in self.centre:
                y = y - y.mean()
                y = y - y.mean()
        year_ids = src.year_ids[idx]
        return DesignMatrix(
            y=y, y_name=src.y_name, X=X, Z=Z, D=year_dummies(year_ids),
            unit_ids=np.array(labels, dtype=object), year_ids=year_ids, meta=dict(src.meta),
        )


def _is_dummy(name):
    return name.startswith("y") and name[1:].isdigit()


def compute_statistics(fit: SfaFit, dm: DesignMatrix, stats, *, base_shares=None, seed=0,
                       rf_trees=500, scenario: ScenarioInputs | None = None):
    """Named scalar statistics of one fit; returns ``(dict, fallback_used)``."""
    out, fallback = {}, False
    if "sfa" in stats:
        for n in fit.beta_names:
            if not _is_dummy(n):
                out[f"beta:{n}"] = fit.beta(n)
        for n in fit.gamma_names:
            out[f"gamma:{n}"] = fit.gamma(n)
        out["sigma_v"] = fit.sigma_v
    vs = variance_shares(fit)
    if "variance" in stats:
        out.update({"s_F": vs.s_F, "s_U": vs.s_U, "s_V": vs.s_V})
    if "diagnostics" in stats:
        d = fit.diagnostics()
        for k in ("mean_efficiency", "lambda", "expected_u_at_mean_z", "mean_expected_u", "mean_jlms"):
            out[k] = d[k]
    if "lmg" in stats or "rf" in stats:
        from .importance import ForestConfig, importance_report

        shares = base_shares if base_shares is not None else vs
        rep = importance_report(fit, dm, seed=seed, with_rf="rf" in stats,
                                rf_config=ForestConfig(n_trees=rf_trees), groups=False, shares=shares)
        fallback = rep.lmg.fallback_used
        if "lmg" in stats:
            for v, s in rep.lmg.shares.items():
                out[f"lmg:{v}"] = float(s)
            for v, s in rep.ineff_lmg.raw.items():
                out[f"ineff_lmg:{v}"] = float(s)
            out["ineff_r2"] = rep.ineff_lmg.r2
            for _, r in rep.combined.iterrows():
                out[f"combined:{r['variable']}"] = float(r["combined"])
        if "rf" in stats:
            for v, s in rep.rf.normalized.items():
                out[f"rf:{v}"] = float(s)
    if "scenario" in stats:
        sc = scenario or ScenarioInputs()
        out["scenario:price_convergence"] = scenario_price_convergence(
            sc.p_current, sc.p_target, fit.beta(sc.price))
        lin, exact = scenario_policy_gap(sc.policy_gap, fit.beta(sc.policy))
        out["scenario:policy_gap"] = lin
        out["scenario:policy_gap_exact"] = exact
        out["scenario:half_gap"] = scenario_half_gap(fit.expected_u_at_mean)
    return out, fallback


def _replicate(b, builder, spec, init, bplan, base_shares, fit_opts):
    rng = np.random.default_rng([bplan.seed, b])
    draw = resample_states(builder.base.unit_ids, rng)
    try:
        dm = builder.build(draw)
        fit = fit_mle(dm, spec, init=init, compute_covariance=False, **fit_opts)
        stats, fb = compute_statistics(fit, dm, bplan.stats, base_shares=base_shares,
                                       seed=bplan.seed + b, rf_trees=bplan.rf_trees,
                                       scenario=bplan.scenario)
        return stats, True, fb, None
    except (NumericalError, DataError) as exc:
        return None, False, False, f"{type(exc).__name__}: {exc}"


def run_bootstrap(panel: Panel, plan: TransformPlan, spec: SfaSpec | None = None,
                  bplan: BootstrapPlan | None = None, baseline: SfaFit | None = None,
                  **fit_opts) -> BootstrapResult:
    """Resample units, refit the frontier and recompute the requested statistics.

    Replicates start from the baseline estimate and skip the covariance
    step. Channel statistics hold ``s_F`` and ``s_U`` at the baseline
    values. Raises :class:`BootstrapFailureError` if more than
    ``max_failure_rate`` of the replicates fail.
    """
    spec = spec or SfaSpec()
    bplan = bplan or BootstrapPlan()
    builder = _ReplicateBuilder(panel, plan, redemean=bplan.redemean)
    if baseline is None:
        baseline = fit_mle(builder.base, spec, **fit_opts)
    base_shares = variance_shares(baseline)
    point, _ = compute_statistics(baseline, builder.base, bplan.stats, base_shares=base_shares,
                                  seed=bplan.seed, rf_trees=bplan.rf_trees, scenario=bplan.scenario)
    opts = {k: v for k, v in fit_opts.items() if k != "compute_covariance"}
    results = Parallel(n_jobs=bplan.n_jobs)(
        delayed(_replicate)(b, builder, spec, baseline.params, bplan, base_shares, opts)
        for b in range(bplan.B)
    )
    cols = list(point)
    draws = np.full((bplan.B, len(cols)), np.nan)
    converged = np.zeros(bplan.B, dtype=bool)
    fallback, failures = 0, []
    for b, (stats, ok, fb, err) in enumerate(results):
        converged[b] = ok
        fallback += int(fb)
        if ok:
            draws[b] = [stats.get(c, np.nan) for c in cols]
        else:
            failures.append({"replicate": b, "error": err})
    res = BootstrapResult(pd.DataFrame(draws, columns=cols), converged, pd.Series(point),
                          fallback, bplan, failures)
    if res.failure_rate > bplan.max_failure_rate:
        raise BootstrapFailureError(res.n_failed, bplan.B)
    if res.n_failed:
        log.warning("%d of %d bootstrap replicates failed", res.n_failed, bplan.B)
    return res


__all__ = [
    "BootstrapPlan",
    "BootstrapResult",
    "ScenarioInputs",
    "compute_statistics",
    "percentile_ci",
    "resample_states",
    "run_bootstrap",
]
