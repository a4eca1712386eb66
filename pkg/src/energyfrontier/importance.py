"""Variable importance of the fitted frontier.

Frontier predictions and regressors are first centred within each year, so
that importance refers to within-year cross-unit variation. Two measures
follow: the LMG (Shapley) decomposition of the OLS R², computed from the R²
of all ``2**p`` regressor subsets, and random-forest permutation importance.
A combined measure weights frontier shares by the frontier variance share
``s_F`` and adds ``s_U`` times the raw LMG of the variables entering the
inefficiency equation in a regression of the JLMS scores on them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import factorial
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.tree import DecisionTreeRegressor
from sklearn.utils.validation import check_is_fitted

from ._validation import as_1d, as_2d, check_same_length
from .exceptions import DataError, RankDeficientError
from .regress import ols_fit

log = logging.getLogger(__name__)

JITTER_SCALE = 1e-7


# --------------------------------------------------------------------------
# year centring


@dataclass(frozen=True)
class CenteredDesign:
    y: np.ndarray
    X: pd.DataFrame
    year_ids: np.ndarray
    jitter_seed: int | None
    jitter_sd: float
    y_unjittered: np.ndarray


def _year_demean(A, codes, n_groups):
    A = np.asarray(A, dtype=np.float64)
    squeeze = A.ndim == 1
    if squeeze:
        A = A[:, None]
    counts = np.bincount(codes, minlength=n_groups).astype(np.float64)
    out = np.empty_like(A)
    for j in range(A.shape[1]):
        means = np.bincount(codes, weights=A[:, j], minlength=n_groups) / counts
        col = A[:, j] - means[codes]
        # second pass removes rounding residue
        means = np.bincount(codes, weights=col, minlength=n_groups) / counts
        out[:, j] = col - means[codes]
    return out[:, 0] if squeeze else out


def year_center(F, X, year_ids, jitter_seed=0, names=None) -> CenteredDesign:
    """Subtract per-year means from ``F`` and every column of ``X``.

    Gaussian jitter with sd ``1e-7 * sd(F_centred)`` is added to the centred
    response, drawn from ``default_rng(jitter_seed)``; pass
    ``jitter_seed=None`` to skip it.
    """
    F = as_1d(F, "F")
    if isinstance(X, pd.DataFrame):
        names = list(X.columns)
    Xa, names0 = as_2d(X, "X")
    names = list(names) if names is not None else names0
    year_ids = np.asarray(year_ids)
    check_same_length(F, Xa, year_ids, names=["F", "X", "year_ids"])
    years, codes = np.unique(year_ids, return_inverse=True)
    counts = np.bincount(codes)
    if np.any(counts < 2):
        raise DataError(f"year(s) {list(years[counts < 2])} have a single observation")
    Fc = _year_demean(F, codes, len(years))
    Xc = _year_demean(Xa, codes, len(years))
    sd = JITTER_SCALE * float(np.std(Fc, ddof=1))
    y = Fc
    if jitter_seed is not None and sd > 0:
        y = Fc + np.random.default_rng(jitter_seed).normal(0.0, sd, size=len(Fc))
    return CenteredDesign(y, pd.DataFrame(Xc, columns=names), year_ids, jitter_seed, sd, Fc)


# --------------------------------------------------------------------------
# LMG


@dataclass(frozen=True)
class LmgResult:
    raw: pd.Series          # sums to r2; NaN for a dropped column
    r2: float
    dropped: str | None = None

    @property
    def shares(self) -> pd.Series:
        return self.raw / self.raw.sum(skipna=True)

    @property
    def fallback_used(self) -> bool:
        return self.dropped is not None


def _shapley_weights(p):
    return np.array([factorial(s) * factorial(p - s - 1) / factorial(p) for s in range(p)])


def _subset_r2(X, y, names):
    n, p = X.shape
    r2 = np.zeros(1 << p)
    ones = np.ones((n, 1))
    cols = np.arange(p)
    for mask in range(1, 1 << p):
        idx = cols[[(mask >> j) & 1 == 1 for j in range(p)]]
        A = np.hstack([ones, X[:, idx]])
        r2[mask] = ols_fit(A, y, names=["const"] + [names[j] for j in idx]).r2
    return r2


def _lmg_from_r2(r2, p):
    w = _shapley_weights(p)
    masks = np.arange(1 << p)
    sizes = np.array([bin(m).count("1") for m in masks])
    raw = np.zeros(p)
    for j in range(p):
        bit = 1 << j
        S = masks[(masks & bit) == 0]
        raw[j] = np.sum(w[sizes[S]] * (r2[S | bit] - r2[S]))
    return raw


def lmg(X, y, names=None, fallback: str | None = "cdd", max_p=20) -> LmgResult:
    """LMG decomposition of R² by subset enumeration with Shapley weights.

    If any subset regression is rank deficient and ``fallback`` names a
    column, that column is dropped, the decomposition recomputed on the
    remaining regressors, and the dropped column reported as NaN.
    """
    if isinstance(X, pd.DataFrame):
        names = list(X.columns)
    Xa, names0 = as_2d(X, "X")
    names = list(names) if names is not None else names0
    y = as_1d(y)
    check_same_length(Xa, y, names=["X", "y"])
    p = Xa.shape[1]
    if p == 0:
        raise DataError("lmg needs at least one regressor")
    if p > max_p:
        raise DataError(f"lmg enumerates 2**p subsets; p={p} exceeds {max_p}")
    try:
        r2 = _subset_r2(Xa, y, names)
    except RankDeficientError:
        if fallback is None or fallback not in names:
            raise
        keep = [j for j, n in enumerate(names) if n != fallback]
        log.warning("near-singular LMG subset fit; dropping %r and recomputing", fallback)
        sub = lmg(Xa[:, keep], y, [names[j] for j in keep], fallback=None, max_p=max_p)
        raw = sub.raw.reindex(names)
        return LmgResult(raw, sub.r2, dropped=fallback)
    raw = _lmg_from_r2(r2, p)
    return LmgResult(pd.Series(raw, index=names), float(r2[-1]))


def lmg_grouped(X, y, groups: Mapping[str, Sequence[str]], names=None, fallback="cdd") -> pd.Series:
    """Sum member LMG shares per group; ``groups`` must partition the regressors."""
    if isinstance(X, pd.DataFrame):
        names = list(X.columns)
    res = lmg(X, y, names=names, fallback=fallback)
    cols = list(res.raw.index)
    seen = {}
    for g, members in groups.items():
        for m in members:
            if m in seen:
                raise DataError(f"column {m!r} is in both group {seen[m]!r} and {g!r}")
            if m not in cols:
                raise DataError(f"group {g!r} lists unknown column {m!r}")
            seen[m] = g
    missing = [c for c in cols if c not in seen]
    if missing:
        raise DataError(f"groups do not cover column(s) {missing}")
    return pd.Series({g: float(res.raw[list(m)].sum(skipna=True)) for g, m in groups.items()})


class LMGImportance(BaseEstimator):
    """Estimator wrapper around :func:`lmg`.

    After ``fit``: ``raw_`` (sums to ``r2_``), ``shares_`` (sums to one),
    ``dropped_`` (fallback column or ``None``).
    """

    def __init__(self, fallback="cdd"):
        self.fallback = fallback

    def fit(self, X, y):
        res = lmg(X, y, fallback=self.fallback)
        self.result_ = res
        self.raw_ = res.raw
        self.shares_ = res.shares
        self.r2_ = res.r2
        self.dropped_ = res.dropped
        return self

    def transform(self, X=None):
        check_is_fitted(self, "raw_")
        return self.shares_


# --------------------------------------------------------------------------
# random forest permutation importance


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None  # default floor(p / 3), at least 1
    min_node: int = 5


@dataclass(frozen=True)
class RfImportance:
    normalized: pd.Series
    scaled: pd.Series
    raw: pd.Series
    se: pd.Series
    oob_mse: float
    config: ForestConfig
    seed: int


def _tree_task(X, y, t, seed, mtry, min_node):
    n, p = X.shape
    rng = np.random.default_rng([seed, t])
    boot = rng.integers(0, n, size=n)
    in_bag = np.zeros(n, dtype=bool)
    in_bag[boot] = True
    oob = np.flatnonzero(~in_bag)
    if oob.size < 2:
        return np.full(p, np.nan), np.nan
    tree = DecisionTreeRegressor(max_features=mtry, min_samples_split=min_node,
                                 random_state=int(rng.integers(2**31 - 1)))
    tree.fit(X[boot], y[boot])
    Xo, yo = X[oob], y[oob]
    base = float(np.mean((tree.predict(Xo) - yo) ** 2))
    diffs = np.empty(p)
    for j in range(p):
        perm = np.random.default_rng([seed, t, j]).permutation(oob.size)
        Xp = Xo.copy()
        Xp[:, j] = Xo[perm, j]
        diffs[j] = float(np.mean((tree.predict(Xp) - yo) ** 2)) - base
    return diffs, base


def rf_importance(X, y, config: ForestConfig | None = None, seed=0, n_jobs=1, names=None) -> RfImportance:
    """Bagged regression trees with out-of-bag permutation importance.

    Tree ``t`` draws its bootstrap sample and tree seed from
    ``default_rng([seed, t])`` and permutes variable ``j`` with
    ``default_rng([seed, t, j])``, so results do not depend on ``n_jobs``.
    Per-variable importance is the mean OOB MSE increase over trees divided
    by its standard error across trees, then normalised to sum to one.
    """
    config = config or ForestConfig()
    if isinstance(X, pd.DataFrame):
        names = list(X.columns)
    Xa, names0 = as_2d(X, "X")
    names = list(names) if names is not None else names0
    y = as_1d(y)
    check_same_length(Xa, y, names=["X", "y"])
    n, p = Xa.shape
    if n < 10:
        raise DataError("rf_importance needs at least 10 observations")
    if np.ptp(y) == 0:
        raise DataError("response is constant")
    mtry = config.mtry or max(1, p // 3)
    out = Parallel(n_jobs=n_jobs)(
        delayed(_tree_task)(Xa, y, t, seed, mtry, config.min_node) for t in range(config.n_trees)
    )
    diffs = np.vstack([d for d, _ in out])
    base = np.array([b for _, b in out])
    ok = ~np.isnan(base)
    diffs = diffs[ok]
    raw = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / np.sqrt(diffs.shape[0]) if diffs.shape[0] > 1 else np.zeros(p)
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = np.where(se > 0, raw / np.where(se > 0, se, 1.0), 0.0)
    total = scaled.sum()
    normalized = scaled / total if total != 0 else np.zeros(p)
    idx = pd.Index(names)
    return RfImportance(
        normalized=pd.Series(normalized, index=idx),
        scaled=pd.Series(scaled, index=idx),
        raw=pd.Series(raw, index=idx),
        se=pd.Series(se, index=idx),
        oob_mse=float(np.mean(base[ok])),
        config=config,
        seed=seed,
    )


class ForestPermutationImportance(BaseEstimator):
    """Estimator wrapper around :func:`rf_importance`."""

    def __init__(self, n_trees=500, mtry=None, min_node=5, random_state=0, n_jobs=1):
        self.n_trees = n_trees
        self.mtry = mtry
        self.min_node = min_node
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        cfg = ForestConfig(self.n_trees, self.mtry, self.min_node)
        res = rf_importance(X, y, cfg, seed=self.random_state, n_jobs=self.n_jobs)
        self.result_ = res
        self.importances_ = res.normalized
        self.raw_importances_ = res.raw
        return self

    def transform(self, X=None):
        check_is_fitted(self, "importances_")
        return self.importances_


# --------------------------------------------------------------------------
# combined measure


INEFFICIENCY_CHANNEL = ("eff", "price", "gdp_pc")


def combined_contributions(frontier_shares: pd.Series, ineff_raw: pd.Series, ineff_r2: float,
                           s_F: float, s_U: float, s_V: float | None = None) -> pd.DataFrame:
    """Per-variable contribution to Var(ln q) through both channels.

    ``combined = frontier_share * s_F + ineff_raw * s_U`` (second term only
    for variables in ``ineff_raw``). ``attrs`` carries the unexplained
    inefficiency share ``s_U * (1 - R²_u)`` and, if given, ``s_V``.
    """
    fs = frontier_shares.fillna(0.0)
    names = list(fs.index) + [c for c in ineff_raw.index if c not in fs.index]
    rows = []
    for v in names:
        f = float(fs.get(v, 0.0))
        u = float(ineff_raw.get(v, 0.0)) if v in ineff_raw.index else 0.0
        rows.append({
            "variable": v,
            "frontier_share": f,
            "frontier_contribution": f * s_F,
            "ineff_raw_lmg": u,
            "ineff_contribution": u * s_U,
            "combined": f * s_F + u * s_U,
        })
    df = pd.DataFrame(rows)
    df.attrs["unexplained_inefficiency"] = s_U * (1.0 - ineff_r2)
    df.attrs["ineff_r2"] = ineff_r2
    df.attrs["s_F"], df.attrs["s_U"] = s_F, s_U
    if s_V is not None:
        df.attrs["s_V"] = s_V
    return df


@dataclass
class ImportanceReport:
    lmg: LmgResult
    ineff_lmg: LmgResult
    combined: pd.DataFrame
    rf: RfImportance | None = None
    groups: pd.Series | None = None
    shares: Mapping[str, float] = field(default_factory=dict)
    fallback_count: int = 0

    @property
    def frontier_shares(self) -> pd.Series:
        return self.lmg.shares

    def to_frame(self) -> pd.DataFrame:
        rows = []
        comb = self.combined.set_index("variable")
        for v in comb.index:
            rows.append({
                "variable": v,
                "frontier_share": float(self.lmg.shares.get(v, np.nan)),
                "ineff_share": float(self.ineff_lmg.raw.get(v, np.nan)),
                "combined": float(comb.loc[v, "combined"]),
                "method": "lmg",
            })
        if self.rf is not None:
            for v in self.rf.normalized.index:
                f = float(self.rf.normalized[v])
                u = float(self.ineff_lmg.raw.get(v, 0.0))
                rows.append({
                    "variable": v,
                    "frontier_share": f,
                    "ineff_share": float(self.ineff_lmg.raw.get(v, np.nan)),
                    "combined": f * self.shares["s_F"] + u * self.shares["s_U"],
                    "method": "rf",
                })
        return pd.DataFrame(rows)


DEFAULT_GROUPS = {
    "temperature": ("hdd", "cdd"),
    "building": ("ressurf_pc", "comsurf_pc"),
}


def default_groups(columns: Sequence[str]):
    """Singletons except the temperature and building blocks (when present)."""
    groups, used = {}, set()
    for g, members in DEFAULT_GROUPS.items():
        m = [c for c in members if c in columns]
        if len(m) == len(members):
            groups[g] = m
            used.update(m)
    for c in columns:
        if c not in used:
            groups[c] = [c]
    return groups


def importance_report(fit, dm, *, inefficiency_columns: Sequence[str] = INEFFICIENCY_CHANNEL,
                      seed=0, with_rf=True, rf_config: ForestConfig | None = None, n_jobs=1,
                      groups: Mapping[str, Sequence[str]] | None = None, fallback="cdd",
                      shares=None) -> ImportanceReport:
    """Full importance analysis of a fitted frontier on its design matrix."""
    from .sfa.diagnostics import variance_shares

    vs = shares if shares is not None else variance_shares(fit)
    s = {"s_F": vs.s_F, "s_U": vs.s_U, "s_V": vs.s_V}
    frontier_cols = [c for c in fit.beta_names if c in dm.X.columns]
    cd = year_center(fit.frontier, dm.X[frontier_cols], dm.year_ids, jitter_seed=seed)
    f_lmg = lmg(cd.X, cd.y, fallback=fallback)

    ineff_cols = [c for c in inefficiency_columns if c in dm.X.columns or c in dm.Z.columns]
    src = pd.concat([dm.X, dm.Z.loc[:, [c for c in dm.Z.columns if c not in dm.X.columns]]], axis=1)
    cu = year_center(fit.jlms, src[ineff_cols], dm.year_ids, jitter_seed=seed)
    u_lmg = lmg(cu.X, cu.y, fallback=None)

    comb = combined_contributions(f_lmg.shares, u_lmg.raw, u_lmg.r2, vs.s_F, vs.s_U, vs.s_V)
    rf = rf_importance(cd.X, cd.y, rf_config, seed=seed, n_jobs=n_jobs) if with_rf else None
    grp = None
    if groups is not False:
        gmap = groups if groups is not None else default_groups(list(cd.X.columns))
        grp = lmg_grouped(cd.X, cd.y, gmap, fallback=fallback)
    return ImportanceReport(f_lmg, u_lmg, comb, rf, grp, s, int(f_lmg.fallback_used))
