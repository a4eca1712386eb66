"""Multiplicative LMDI-I decomposition of per-capita energy use.

Per-capita energy in sector k is written as activity x intensity x climate,
``E = A * INT * CLI`` with ``CLI = (HDD/HDD_ref)**alpha * (CDD/CDD_ref)**beta``
for the residential and commercial sectors and ``CLI = 1`` elsewhere.
Between two periods, each factor's multiplicative effect is

    D_X = exp( sum_i  L(E_i1, E_i0) / L(E_1, E_0) * ln(X_i1 / X_i0) )

over sub-aggregates ``i`` (unit x sector cells), with ``L`` the logarithmic
mean and ``E = sum_i E_i``. The product of the three effects equals
``E_1 / E_0`` exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataError
from .regress import ols_fit, twoway_within

log = logging.getLogger(__name__)

SECTORS = ("residential", "commercial", "industrial", "transport")
CLIMATE_SECTORS = ("residential", "commercial")
FACTORS = ("activity", "intensity", "climate")

# default activity variable per sector (floor area, industrial GDP, VMT)
ACTIVITY_VARIABLES = {
    "residential": "ressurf_pc",
    "commercial": "comsurf_pc",
    "industrial": "gdp_ind_pc",
    "transport": "vmt_pc",
}

_LOG_MEAN_RTOL = 1e-12


def log_mean(a, b):
    """Logarithmic mean ``(a - b) / (ln a - ln b)``, equal to ``a`` when ``a == b``."""
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    if np.any(~(a_arr > 0)) or np.any(~(b_arr > 0)):
        raise DataError("log_mean requires strictly positive arguments")
    a_arr, b_arr = np.broadcast_arrays(a_arr, b_arr)
    close = np.abs(a_arr - b_arr) <= _LOG_MEAN_RTOL * np.maximum(a_arr, b_arr)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(close, a_arr, (a_arr - b_arr) / (np.log(a_arr) - np.log(b_arr)))
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class SectorSeries:
    """Long-format sector data: one row per (unit, year, sector).

    Columns: ``unit``, ``year``, ``sector``, ``energy`` (per capita),
    ``activity`` (per capita, sector-specific units), ``hdd``, ``cdd``.
    """

    frame: pd.DataFrame

    REQUIRED = ("unit", "year", "sector", "energy", "activity", "hdd", "cdd")

    def __post_init__(self):
        df = self.frame
        missing = [c for c in self.REQUIRED if c not in df.columns]
        if missing:
            raise DataError(f"sector series is missing column(s) {missing}")
        unit = df["unit"].astype(str).to_numpy(dtype=object)
        year = df["year"].to_numpy().astype(np.int64)
        sector = df["sector"].astype(str).str.lower().to_numpy(dtype=object)
        bad = sorted(set(sector) - set(SECTORS))
        if bad:
            raise DataError(f"unknown sector label(s) {bad}; expected {list(SECTORS)}")
        num = {c: pd.to_numeric(df[c], errors="raise").to_numpy(dtype=np.float64)
               for c in ("energy", "activity", "hdd", "cdd")}
        u_code = pd.factorize(unit, sort=True)[0]
        s_code = pd.factorize(sector, sort=True)[0]
        order = np.lexsort((year, s_code, u_code))
        key = np.column_stack([u_code, s_code, year])[order]
        dup = np.flatnonzero(np.all(key[1:] == key[:-1], axis=1))
        if dup.size:
            i = order[dup[0]]
            raise DataError(f"duplicate sector row {(unit[i], int(year[i]), sector[i])}")
        for c in ("energy", "activity"):
            bad_rows = np.flatnonzero(~(num[c] > 0))
            if bad_rows.size:
                i = bad_rows[0]
                raise DataError(f"{c} must be > 0; got {num[c][i]!r} for ({unit[i]}, {year[i]}, {sector[i]})")
        for c in ("hdd", "cdd"):
            if np.any(num[c] < 0):
                raise DataError(f"{c} must be non-negative")
        cols = {"unit": unit, "year": year, "sector": sector, **num}
        out = pd.DataFrame({c: cols[c][order] for c in self.REQUIRED})
        object.__setattr__(self, "frame", out)

    @classmethod
    def from_csv(cls, path, *, unit_col="state") -> "SectorSeries":
        try:
            df = pd.read_csv(path, comment="#")
        except FileNotFoundError as exc:
            raise DataError(f"input file not found: {path}") from exc
        except pd.errors.EmptyDataError as exc:
            raise DataError(f"{path}: no data rows") from exc
        if len(df) == 0:
            raise DataError(f"{path}: no data rows")
        df = df.rename(columns={unit_col: "unit", "energy_pc": "energy", "activity_pc": "activity"})
        return cls(df)

    @property
    def years(self) -> list[int]:
        return sorted(int(t) for t in self.frame["year"].unique())

    @property
    def units(self) -> list[str]:
        return list(pd.unique(self.frame["unit"]))

    def for_unit(self, unit) -> "SectorSeries":
        return SectorSeries(self.frame[self.frame["unit"] == unit])

    def sector(self, sector) -> pd.DataFrame:
        return self.frame[self.frame["sector"] == sector]

    def total_energy(self) -> pd.Series:
        return self.frame.groupby("year")["energy"].sum()


def replace_degenerate(values):
    """Replace exact zeros by half the smallest positive value; return ``(values, count)``."""
    v = np.asarray(values, dtype=np.float64).copy()
    zero = v <= 0
    n = int(zero.sum())
    if n:
        pos = v[~zero]
        if pos.size == 0:
            raise DataError("degree-day series has no positive value")
        v[zero] = 0.5 * pos.min()
    return v, n


@dataclass(frozen=True)
class ClimateConfig:
    hdd_ref: float
    cdd_ref: float
    alpha: Mapping[str, float] = field(default_factory=dict)
    beta: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.hdd_ref > 0 and self.cdd_ref > 0):
            raise DataError("climate reference levels must be strictly positive")

    @classmethod
    def estimate(cls, series: SectorSeries, reference: SectorSeries | None = None,
                 sectors: Sequence[str] = CLIMATE_SECTORS) -> "ClimateConfig":
        """Reference levels are sample means of ``reference`` (default: ``series``);
        elasticities come from :func:`climate_elasticities` on ``series``."""
        ref = reference if reference is not None else series
        first = ref.frame.drop_duplicates(["unit", "year"])
        alpha, beta = {}, {}
        for s in sectors:
            alpha[s], beta[s] = climate_elasticities(series, s)
        return cls(float(first["hdd"].mean()), float(first["cdd"].mean()), alpha, beta)

    def to_dict(self):
        return {"hdd_ref": self.hdd_ref, "cdd_ref": self.cdd_ref,
                "alpha": dict(self.alpha), "beta": dict(self.beta)}


def climate_elasticities(series: SectorSeries, sector: str):
    """Two-way within regression of ln(E/A) on ln HDD and ln CDD; returns ``(alpha, beta)``."""
    if sector not in CLIMATE_SECTORS:
        raise DataError(f"climate elasticities are defined for {CLIMATE_SECTORS}, not {sector!r}")
    df = series.sector(sector)
    n_units, n_years = df["unit"].nunique(), df["year"].nunique()
    if n_units < 3 or n_years < 3:
        raise DataError(f"need at least 3 units and 3 years, got {n_units} x {n_years}")
    hdd, n_h = replace_degenerate(df["hdd"].to_numpy())
    cdd, n_c = replace_degenerate(df["cdd"].to_numpy())
    if n_h or n_c:
        log.warning("%s: replaced %d zero HDD and %d zero CDD values by half the smallest positive value",
                    sector, n_h, n_c)
    y = np.log(df["energy"].to_numpy() / df["activity"].to_numpy())
    X = np.column_stack([np.log(hdd), np.log(cdd)])
    Xw, yw = twoway_within(X, y, df["unit"].to_numpy(), df["year"].to_numpy())
    fit = ols_fit(Xw, yw, names=["ln_hdd", "ln_cdd"])
    return float(fit.coef[0]), float(fit.coef[1])


def climate_factor(hdd, cdd, cfg: ClimateConfig, sector: str):
    """``(HDD/HDD_ref)**alpha * (CDD/CDD_ref)**beta``; 1 for non-building sectors."""
    hdd = np.asarray(hdd, dtype=np.float64)
    cdd = np.asarray(cdd, dtype=np.float64)
    if sector not in CLIMATE_SECTORS:
        out = np.ones(np.broadcast(hdd, cdd).shape)
    else:
        a = float(cfg.alpha.get(sector, 0.0))
        b = float(cfg.beta.get(sector, 0.0))
        out = (hdd / cfg.hdd_ref) ** a * (cdd / cfg.cdd_ref) ** b
    return float(out) if out.ndim == 0 else out


def factor_table(series: SectorSeries, cfg: ClimateConfig) -> pd.DataFrame:
    """Per-row activity, climate and intensity factors (zeros in HDD/CDD substituted)."""
    cols = {c: series.frame[c].to_numpy() for c in SectorSeries.REQUIRED}
    hdd, n_h = replace_degenerate(cols["hdd"])
    cdd, n_c = replace_degenerate(cols["cdd"])
    if n_h or n_c:
        log.info("replaced %d zero HDD / %d zero CDD values before computing climate factors", n_h, n_c)
    cli = np.ones(len(hdd))
    for s in CLIMATE_SECTORS:
        m = cols["sector"] == s
        cli[m] = climate_factor(hdd[m], cdd[m], cfg, s)
    act = cols["activity"]
    df = pd.DataFrame({**cols, "cli": cli, "act": act, "int": cols["energy"] / (act * cli)})
    df.attrs["substituted"] = {"hdd": n_h, "cdd": n_c}
    return df


# --------------------------------------------------------------------------
# decomposition


@dataclass(frozen=True)
class LmdiResult:
    t0: int
    t1: int
    e0: float
    e1: float
    effects: Mapping[str, float]
    sector_effects: pd.DataFrame  # index: sector, columns: FACTORS

    @property
    def d_tot(self) -> float:
        return self.e1 / self.e0

    @property
    def product(self) -> float:
        return float(np.prod([self.effects[f] for f in FACTORS]))

    def pp_contribution(self, effect: float) -> float:
        """Percentage-point share of the total change attributed to an effect.

        Uses ``ln D_X / ln D_tot * (D_tot - 1)`` so contributions add up to
        the total percentage change; when ``D_tot == 1`` the limit ``ln D_X``
        is used.
        """
        ln_tot = np.log(self.d_tot)
        ln_x = np.log(effect)
        if abs(ln_tot) < 1e-15:
            return 100.0 * ln_x
        return 100.0 * ln_x / ln_tot * (self.d_tot - 1.0)

    def to_frame(self) -> pd.DataFrame:
        period = f"{self.t0}-{self.t1}"
        rows = []
        for s in self.sector_effects.index:
            for f in FACTORS:
                d = float(self.sector_effects.loc[s, f])
                rows.append((f, s, period, d, self.pp_contribution(d)))
        for f in FACTORS:
            rows.append((f, "all", period, self.effects[f], self.pp_contribution(self.effects[f])))
        rows.append(("total", "all", period, self.d_tot, 100.0 * (self.d_tot - 1.0)))
        return pd.DataFrame(rows, columns=["factor", "sector", "period", "effect", "pp_contribution"])

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "t1": self.t1,
            "e0": self.e0,
            "e1": self.e1,
            "d_tot": self.d_tot,
            "effects": dict(self.effects),
            "pp_contribution": {f: self.pp_contribution(self.effects[f]) for f in FACTORS},
            "sector_effects": json.loads(self.sector_effects.to_json(orient="index")),
        }


def _period_cells(table: pd.DataFrame, t):
    # the table is sorted by (unit, sector, year), so rows of one year come out in cell order
    return np.flatnonzero(table["year"].to_numpy() == t)


def lmdi_discrete(series: SectorSeries, t0: int, t1: int, cfg: ClimateConfig,
                  table: pd.DataFrame | None = None) -> LmdiResult:
    """Decompose the change in total per-capita energy between ``t0`` and ``t1``."""
    table = factor_table(series, cfg) if table is None else table
    i0 = _period_cells(table, t0)
    i1 = _period_cells(table, t1)
    if i0.size == 0 or i1.size == 0:
        raise DataError(f"years {t0} and/or {t1} are not present")
    unit = table["unit"].to_numpy()
    sector = table["sector"].to_numpy()
    k0 = list(zip(unit[i0], sector[i0]))
    k1 = list(zip(unit[i1], sector[i1]))
    if k0 != k1:
        diff = sorted(set(k0) ^ set(k1))
        raise DataError(f"cells missing in one of the periods: {diff[:10]}")
    energy = table["energy"].to_numpy()
    e0, e1 = energy[i0], energy[i1]
    E0, E1 = float(np.sum(e0)), float(np.sum(e1))
    w = log_mean(e1, e0) / log_mean(E1, E0)
    sectors = sector[i0]
    present = [s for s in SECTORS if np.any(sectors == s)]
    effects = {}
    sub = np.empty((len(present), len(FACTORS)))
    for j, (f, col) in enumerate(zip(FACTORS, ("act", "int", "cli"))):
        x = table[col].to_numpy()
        terms = w * np.log(x[i1] / x[i0])
        effects[f] = float(np.exp(np.sum(terms)))
        for i, s in enumerate(present):
            sub[i, j] = np.exp(np.sum(terms[sectors == s]))
    sector_effects = pd.DataFrame(sub, index=pd.Index(present, name="sector"), columns=list(FACTORS))
    return LmdiResult(t0, t1, E0, E1, effects, sector_effects)


def lmdi_chained(series: SectorSeries, years: Sequence[int] | None, cfg: ClimateConfig) -> pd.DataFrame:
    """Chain year-on-year effects; returns cumulative indices per year (base = 1).

    Columns: ``activity``, ``intensity``, ``climate``, ``total`` (product of
    the three) and ``observed`` (E_t / E_0), plus ``<factor>:<sector>``
    cumulative sector sub-effects.
    """
    years = list(series.years if years is None else years)
    if len(years) < 1:
        raise DataError("no years to chain")
    gaps = [b for a, b in zip(years, years[1:]) if b != a + 1]
    if gaps:
        raise DataError(f"year sequence has gaps before {gaps}")
    table = factor_table(series, cfg)
    cols = list(FACTORS) + [f"{f}:{s}" for f in FACTORS for s in SECTORS]
    cum = {c: 1.0 for c in cols}
    e_base = float(table.loc[table["year"] == years[0], "energy"].sum())
    rows = []
    rows.append({"year": years[0], **cum, "total": 1.0, "observed": 1.0})
    for a, b in zip(years, years[1:]):
        res = lmdi_discrete(series, a, b, cfg, table=table)
        for f in FACTORS:
            cum[f] *= res.effects[f]
            for s in res.sector_effects.index:
                cum[f"{f}:{s}"] *= float(res.sector_effects.loc[s, f])
        rows.append({
            "year": b,
            **cum,
            "total": cum["activity"] * cum["intensity"] * cum["climate"],
            "observed": res.e1 / e_base,
        })
    out = pd.DataFrame(rows).set_index("year")
    present = set(series.frame["sector"])
    keep = list(FACTORS) + ["total", "observed"] + [c for c in cols[3:] if c.split(":")[1] in present]
    return out[keep]
