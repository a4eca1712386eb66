"""State-year panel: ingestion, transformation plans and design matrices.

A :class:`Panel` is an immutable, balanced unit x year table. A
:class:`TransformPlan` says, per column, whether it enters in logs or levels,
whether it is centred on the pooled sample mean, and which role(s) it plays.
:func:`apply_transforms` turns the two into a :class:`DesignMatrix` that the
frontier estimator consumes.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from ._validation import check_balanced_index
from .exceptions import DataError

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

log = logging.getLogger(__name__)

ROLES = frozenset(
    {"response", "frontier", "inefficiency", "id", "activity", "climate"}
)
# accepted spellings for roles in config files
_ROLE_ALIASES = {
    "frontier-regressor": "frontier",
    "inefficiency-regressor": "inefficiency",
}
TRANSFORMS = frozenset({"log", "level"})
CENTERS = frozenset({"pooled-mean", "none"})


# --------------------------------------------------------------------------
# transform plan


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    transform: str = "level"
    center: str = "none"
    roles: tuple[str, ...] = ()

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise DataError(f"column {self.name!r}: unknown transform {self.transform!r}")
        if self.center not in CENTERS:
            raise DataError(f"column {self.name!r}: unknown center {self.center!r}")
        roles = tuple(_ROLE_ALIASES.get(r, r) for r in self.roles)
        unknown = set(roles) - ROLES
        if unknown:
            raise DataError(f"column {self.name!r}: unknown role(s) {sorted(unknown)}")
        object.__setattr__(self, "roles", roles)


@dataclass(frozen=True)
class TransformPlan:
    """Per-column directives for building a design matrix.

    Exactly one column must carry the ``response`` role. Columns with the
    ``frontier`` role enter the frontier equation, columns with the
    ``inefficiency`` role enter the log-variance equation of the
    inefficiency term; one column may carry both.
    """

    columns: tuple[ColumnSpec, ...]
    unit_col: str = "state"
    year_col: str = "year"

    def __post_init__(self):
        names = [c.name for c in self.columns]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise DataError(f"transform plan lists column(s) more than once: {sorted(dup)}")
        n_resp = sum("response" in c.roles for c in self.columns)
        if n_resp != 1:
            raise DataError(f"transform plan needs exactly one response column, found {n_resp}")

    def __getitem__(self, name) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def with_role(self, role) -> list[str]:
        return [c.name for c in self.columns if role in c.roles]

    @property
    def response(self) -> str:
        return self.with_role("response")[0]

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, cfg: Mapping) -> "TransformPlan":
        items = cfg.get("column") or cfg.get("columns")
        if not items:
            raise DataError("transform plan has no 'column' entries")
        specs = []
        for item in items:
            if "column" in item and "name" not in item:
                item = {**item, "name": item["column"]}
            unknown = set(item) - {"name", "column", "transform", "center", "role", "roles"}
            if unknown:
                raise DataError(f"transform plan entry has unknown key(s) {sorted(unknown)}")
            roles = item.get("roles", item.get("role", ()))
            if isinstance(roles, str):
                roles = (roles,)
            specs.append(
                ColumnSpec(
                    name=str(item["name"]),
                    transform=item.get("transform", "level"),
                    center=item.get("center", "none"),
                    roles=tuple(roles),
                )
            )
        return cls(
            columns=tuple(specs),
            unit_col=cfg.get("unit_col", "state"),
            year_col=cfg.get("year_col", "year"),
        )

    @classmethod
    def from_file(cls, path) -> "TransformPlan":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read transform plan {path}: {exc}") from exc
        if path.suffix.lower() == ".json":
            cfg = json.loads(raw)
        else:
            cfg = tomllib.loads(raw.decode("utf-8"))
        return cls.from_dict(cfg)

    def to_dict(self) -> dict:
        return {
            "unit_col": self.unit_col,
            "year_col": self.year_col,
            "column": [
                {"name": c.name, "transform": c.transform, "center": c.center, "role": list(c.roles)}
                for c in self.columns
            ],
        }

    def to_toml(self) -> str:
        lines = [f'unit_col = "{self.unit_col}"', f'year_col = "{self.year_col}"', ""]
        for c in self.columns:
            roles = ", ".join(f'"{r}"' for r in c.roles)
            lines += [
                "[[column]]",
                f'name = "{c.name}"',
                f'transform = "{c.transform}"',
                f'center = "{c.center}"',
                f"role = [{roles}]",
                "",
            ]
        return "\n".join(lines)

    @classmethod
    def baseline(cls) -> "TransformPlan":
        """The baseline plan: logs for strictly positive series, levels otherwise."""
        log_c = ("log", "pooled-mean")
        lvl_c = ("level", "pooled-mean")
        rows = [
            ("energy_pc", ("log", "none"), ("response",)),
            ("price", log_c, ("frontier", "inefficiency")),
            ("gdp_pc", log_c, ("frontier", "inefficiency")),
            ("eff", lvl_c, ("frontier", "inefficiency")),
            ("vmt_pc", log_c, ("frontier",)),
            ("comsurf_pc", log_c, ("frontier",)),
            ("ressurf_pc", log_c, ("frontier",)),
            ("eint_ind", log_c, ("frontier",)),
            ("ff_pc", lvl_c, ("frontier",)),
            ("ffelec_pc", log_c, ("frontier",)),
            ("hdd", lvl_c, ("frontier",)),
            ("cdd", lvl_c, ("frontier",)),
        ]
        return cls(tuple(ColumnSpec(n, t, c, r) for n, (t, c), r in rows))


# --------------------------------------------------------------------------
# panel


@dataclass(frozen=True)
class Panel:
    """A balanced unit x year panel, sorted by (unit, year).

    The underlying frame is copied on construction; treat it as read-only.
    Operations return new panels.
    """

    frame: pd.DataFrame
    unit_col: str = "state"
    year_col: str = "year"

    def __post_init__(self):
        df = self.frame
        for c in (self.unit_col, self.year_col):
            if c not in df.columns:
                raise DataError(f"panel is missing identifier column {c!r}")
        if len(df) == 0:
            raise DataError("no data rows")
        df = df.copy()
        df[self.unit_col] = df[self.unit_col].astype(str)
        df[self.year_col] = df[self.year_col].astype(np.int64)
        check_balanced_index(df[self.unit_col].to_numpy(), df[self.year_col].to_numpy())
        df = df.sort_values([self.unit_col, self.year_col], kind="mergesort").reset_index(drop=True)
        object.__setattr__(self, "frame", df)

    @property
    def units(self) -> list[str]:
        return list(pd.unique(self.frame[self.unit_col]))

    @property
    def years(self) -> list[int]:
        return sorted(int(y) for y in pd.unique(self.frame[self.year_col]))

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def unit_ids(self) -> np.ndarray:
        return self.frame[self.unit_col].to_numpy()

    @property
    def year_ids(self) -> np.ndarray:
        return self.frame[self.year_col].to_numpy()

    def column(self, name) -> np.ndarray:
        if name not in self.frame.columns:
            raise DataError(f"panel has no column {name!r}")
        return self.frame[name].to_numpy(dtype=np.float64)

    @property
    def value_columns(self) -> list[str]:
        return [c for c in self.frame.columns if c not in (self.unit_col, self.year_col)]

    def summary(self) -> dict:
        years = self.years
        return {
            "rows": self.n_rows,
            "units": len(self.units),
            "year_min": years[0],
            "year_max": years[-1],
        }

    def to_csv(self, path) -> None:
        # repr floats round-trip exactly when read back with float_precision="round_trip"
        self.frame.to_csv(path, index=False, float_format=None)

    def __len__(self):
        return self.n_rows


def ingest_csv(path, schema: TransformPlan | None = None, *, unit_col=None, year_col=None) -> Panel:
    """Read ``state,year,<var>...`` CSV into a balanced :class:`Panel`.

    With a ``schema`` every planned column must be present and numeric;
    without one every non-identifier column is parsed as numeric.
    """
    path = Path(path)
    unit_col = unit_col or (schema.unit_col if schema else "state")
    year_col = year_col or (schema.year_col if schema else "year")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8", comment="#")
    except FileNotFoundError as exc:
        raise DataError(f"input file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path}: no data rows") from exc
    if len(raw) == 0:
        raise DataError(f"{path}: no data rows")
    raw.columns = [c.strip() for c in raw.columns]
    for c in (unit_col, year_col):
        if c not in raw.columns:
            raise DataError(f"{path}: missing column {c!r}")
    wanted = schema.names if schema is not None else [c for c in raw.columns if c not in (unit_col, year_col)]
    missing = [c for c in wanted if c not in raw.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}")

    out = {unit_col: raw[unit_col].str.strip()}
    years = pd.to_numeric(raw[year_col].str.strip(), errors="coerce")
    bad = years.isna() | (years != np.floor(years))
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(f"{path}: non-integer year {raw[year_col].iloc[i]!r} at data row {i + 1}")
    out[year_col] = years.astype(np.int64)
    for c in wanted:
        text = raw[c].str.strip()
        vals = pd.to_numeric(text, errors="coerce")
        bad = vals.isna()
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            what = "missing value" if text.iloc[i] == "" else f"non-numeric value {text.iloc[i]!r}"
            raise DataError(f"{path}: {what} in column {c!r} at data row {i + 1}")
        # re-parse with round-trip precision so serialisation is lossless
        out[c] = np.array([float(s) for s in text], dtype=np.float64)
    panel = Panel(pd.DataFrame(out), unit_col=unit_col, year_col=year_col)
    s = panel.summary()
    log.info("ingested %s: %d rows, %d units, years %d-%d", path, s["rows"], s["units"], s["year_min"], s["year_max"])
    return panel


# --------------------------------------------------------------------------
# design matrix


@dataclass(frozen=True)
class DesignMatrix:
    """Transformed response and regressor blocks.

    ``X`` holds the frontier regressors and ``Z`` the inefficiency
    regressors, both without intercepts; ``D`` holds year dummies with the
    smallest sample year as reference. ``meta`` maps column names to the
    directives that produced them.
    """

    y: np.ndarray
    y_name: str
    X: pd.DataFrame
    Z: pd.DataFrame
    D: pd.DataFrame
    unit_ids: np.ndarray
    year_ids: np.ndarray
    meta: dict = field(default_factory=dict)
    mundlak_columns: tuple[str, ...] = ()

    @property
    def n_obs(self) -> int:
        return len(self.y)

    def frontier_matrix(self, columns: Sequence[str] | None = None, year_effects=True):
        """Return ``(array, names)`` with a leading intercept column."""
        cols = list(self.X.columns) if columns is None else list(columns)
        blocks = [np.ones((self.n_obs, 1)), self.X[cols].to_numpy(dtype=np.float64)]
        names = ["const"] + cols
        if year_effects and self.D.shape[1]:
            blocks.append(self.D.to_numpy(dtype=np.float64))
            names += list(self.D.columns)
        return np.hstack(blocks), names

    def inefficiency_matrix(self, columns: Sequence[str] | None = None):
        cols = list(self.Z.columns) if columns is None else list(columns)
        arr = np.hstack([np.ones((self.n_obs, 1)), self.Z[cols].to_numpy(dtype=np.float64)])
        return arr, ["const"] + cols


def _transform_column(panel: Panel, spec: ColumnSpec) -> np.ndarray:
    x = panel.column(spec.name)
    if spec.transform == "log":
        bad = np.flatnonzero(~(x > 0))
        if bad.size:
            i = int(bad[0])
            unit, year = panel.unit_ids[i], panel.year_ids[i]
            raise DataError(
                f"log transform of column {spec.name!r}: non-positive value {x[i]!r} "
                f"at row {i} ({unit}, {year})"
            )
        x = np.log(x)
    if spec.center == "pooled-mean":
        x = x - x.mean()
        # a second pass removes the rounding residue of the first
        x = x - x.mean()
    return x


def year_dummies(year_ids, prefix="y") -> pd.DataFrame:
    years = np.unique(year_ids)
    cols = {f"{prefix}{t}": (year_ids == t).astype(np.float64) for t in years[1:]}
    return pd.DataFrame(cols, index=pd.RangeIndex(len(year_ids)))


def apply_transforms(panel: Panel, plan: TransformPlan) -> DesignMatrix:
    """Apply log/centering directives and append year dummies."""
    missing = [c for c in plan.names if c not in panel.frame.columns]
    if missing:
        raise DataError(f"transform plan refers to column(s) absent from the panel: {missing}")
    values, meta = {}, {}
    for spec in plan.columns:
        if "id" in spec.roles:
            continue
        values[spec.name] = _transform_column(panel, spec)
        meta[spec.name] = {"transform": spec.transform, "center": spec.center, "roles": list(spec.roles)}
    idx = pd.RangeIndex(panel.n_rows)
    X = pd.DataFrame({c: values[c] for c in plan.with_role("frontier")}, index=idx)
    Z = pd.DataFrame({c: values[c] for c in plan.with_role("inefficiency")}, index=idx)
    D = year_dummies(panel.year_ids)
    for c in D.columns:
        meta[c] = {"transform": "dummy", "center": "none", "roles": ["year-effect"]}
    return DesignMatrix(
        y=values[plan.response],
        y_name=plan.response,
        X=X,
        Z=Z,
        D=D,
        unit_ids=panel.unit_ids.copy(),
        year_ids=panel.year_ids.copy(),
        meta=meta,
    )


def unit_means(values: np.ndarray, unit_ids: np.ndarray) -> np.ndarray:
    """Within-unit time averages, broadcast back to rows."""
    codes, uniques = pd.factorize(unit_ids)
    counts = np.bincount(codes, minlength=len(uniques))
    if values.ndim == 1:
        return (np.bincount(codes, weights=values, minlength=len(uniques)) / counts)[codes]
    out = np.empty_like(values, dtype=np.float64)
    for j in range(values.shape[1]):
        out[:, j] = (np.bincount(codes, weights=values[:, j], minlength=len(uniques)) / counts)[codes]
    return out


def mundlak_augment(dm: DesignMatrix, prefix="mean_") -> DesignMatrix:
    """Append pooled-centred within-unit averages of every time-varying frontier regressor."""
    X = dm.X.copy()
    added, meta = [], dict(dm.meta)
    for c in dm.X.columns:
        if c in dm.mundlak_columns:
            continue
        x = dm.X[c].to_numpy(dtype=np.float64)
        xbar = unit_means(x, dm.unit_ids)
        if np.max(np.abs(x - xbar), initial=0.0) <= 1e-12 * max(1.0, np.max(np.abs(x), initial=0.0)):
            warnings.warn(
                f"column {c!r} is constant within every unit; its unit-mean column would be "
                "collinear with it and is not added",
                stacklevel=2,
            )
            continue
        name = f"{prefix}{c}"
        X[name] = xbar - xbar.mean()
        meta[name] = {"transform": "unit-mean", "center": "pooled-mean", "roles": ["frontier", "mundlak"], "source": c}
        added.append(name)
    return replace(dm, X=X, meta=meta, mundlak_columns=tuple(dm.mundlak_columns) + tuple(added))


# --------------------------------------------------------------------------
# subsets


@dataclass(frozen=True)
class SubsetRule:
    exclude_units: tuple[str, ...] = ()
    exclude_years: tuple[int, ...] = ()
    year_min: int | None = None
    year_max: int | None = None
    label: str = ""


SUBSETS = {
    "excl_fossil": SubsetRule(exclude_units=("WY", "ND", "WV", "AK", "NM"), label="Excl. fossil"),
    "excl_crisis": SubsetRule(exclude_years=(2008, 2009, 2020), label="Excl. crisis"),
    "excl_industrial": SubsetRule(exclude_units=("LA", "IN", "NC", "IA", "KY"), label="Excl. indust."),
    "early": SubsetRule(year_min=2006, year_max=2013, label="Early 06-13"),
    "recent": SubsetRule(year_min=2014, year_max=2022, label="Recent 14-22"),
}


def filter_subset(panel: Panel, rule: SubsetRule) -> Panel:
    """Drop units/years per ``rule``. Transforms must be re-applied afterwards."""
    units, years = set(panel.units), set(panel.years)
    unknown_u = [u for u in rule.exclude_units if u not in units]
    unknown_y = [t for t in rule.exclude_years if t not in years]
    if unknown_u or unknown_y:
        raise DataError(f"subset rule refers to absent units {unknown_u} / years {unknown_y}")
    df = panel.frame
    keep = ~df[panel.unit_col].isin(rule.exclude_units) & ~df[panel.year_col].isin(rule.exclude_years)
    if rule.year_min is not None:
        keep &= df[panel.year_col] >= rule.year_min
    if rule.year_max is not None:
        keep &= df[panel.year_col] <= rule.year_max
    if not keep.any():
        raise DataError("subset rule removes every observation")
    return Panel(df.loc[keep].reset_index(drop=True), unit_col=panel.unit_col, year_col=panel.year_col)


def relabel_units(panel: Panel, draw: Iterable[str], sep="#") -> Panel:
    """Rebuild a panel from a multiset of units; repeated units become distinct clusters."""
    df = panel.frame
    groups = {u: g for u, g in df.groupby(panel.unit_col, sort=False)}
    parts, seen = [], {}
    for u in draw:
        k = seen.get(u, 0)
        seen[u] = k + 1
        g = groups[u].copy()
        g[panel.unit_col] = f"{u}{sep}{k}"
        parts.append(g)
    return Panel(pd.concat(parts, ignore_index=True), unit_col=panel.unit_col, year_col=panel.year_col)
