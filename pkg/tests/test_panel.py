import json
import math

import numpy as np
import pandas as pd
import pytest

from energyfrontier.exceptions import DataError, UnbalancedPanelError
from energyfrontier.panel import (
    SUBSETS,
    ColumnSpec,
    Panel,
    SubsetRule,
    TransformPlan,
    apply_transforms,
    filter_subset,
    ingest_csv,
    mundlak_augment,
    relabel_units,
)
from energyfrontier.regress import ols_fit
from energyfrontier.synth import STATE_CODES


def _plan(*cols):
    return TransformPlan(tuple(cols))


def test_fixture_3x4_is_balanced(fixture_csv):
    p = ingest_csv(fixture_csv)
    s = p.summary()
    assert (s["rows"], s["units"], s["year_min"], s["year_max"]) == (12, 3, 2010, 2013)
    assert p.units == ["CA", "TX", "VT"]


def test_empty_file(tmp_path):
    f = tmp_path / "empty.csv"
    f.write_text("state,year,x\n")
    with pytest.raises(DataError, match="no data rows"):
        ingest_csv(f)
    f.write_text("")
    with pytest.raises(DataError, match="no data rows"):
        ingest_csv(f)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        ingest_csv(tmp_path / "nope.csv")


def test_missing_column(fixture_csv):
    plan = _plan(ColumnSpec("energy_pc", "log", "none", ("response",)), ColumnSpec("vmt_pc", "log"))
    with pytest.raises(DataError, match="vmt_pc"):
        ingest_csv(fixture_csv, plan)


def test_non_numeric_cell_located(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("state,year,x\nA,2000,1\nA,2001,abc\nB,2000,1\nB,2001,2\n")
    with pytest.raises(DataError, match=r"'abc'.*'x'.*row 2"):
        ingest_csv(f)
    f.write_text("state,year,x\nA,2000,1\nA,2001,\nB,2000,1\nB,2001,2\n")
    with pytest.raises(DataError, match="missing value"):
        ingest_csv(f)


def test_unbalanced_lists_missing_pairs(tmp_path):
    f = tmp_path / "unb.csv"
    f.write_text("state,year,x\nA,2000,1\nA,2001,2\nB,2000,1\n")
    with pytest.raises(UnbalancedPanelError) as exc:
        ingest_csv(f)
    assert ("B", 2001) in exc.value.missing


def test_duplicate_pair(tmp_path):
    f = tmp_path / "dup.csv"
    f.write_text("state,year,x\nA,2000,1\nA,2000,2\nA,2001,2\nB,2000,1\nB,2001,1\n")
    with pytest.raises(UnbalancedPanelError, match="duplicate"):
        ingest_csv(f)


def test_csv_round_trip_is_bit_exact(tmp_path, small_dgp):
    _, panel, _ = small_dgp
    f = tmp_path / "p.csv"
    panel.to_csv(f)
    back = ingest_csv(f)
    for c in panel.value_columns:
        a, b = panel.column(c), back.column(c)
        assert np.array_equal(a.view(np.uint64), b.view(np.uint64)), c


def test_log_then_centre():
    df = pd.DataFrame({"state": ["A", "A", "A"], "year": [1, 2, 3], "y": [1.0, 2.0, 3.0],
                       "x": [1.0, math.e, math.e**2], "k": [4.0, 4.0, 4.0]})
    plan = _plan(ColumnSpec("y", "level", "none", ("response",)),
                 ColumnSpec("x", "log", "pooled-mean", ("frontier",)),
                 ColumnSpec("k", "level", "pooled-mean", ("frontier",)))
    dm = apply_transforms(Panel(df), plan)
    np.testing.assert_allclose(dm.X["x"], [-1.0, 0.0, 1.0], atol=1e-15)
    assert np.all(dm.X["k"] == 0.0)


def test_log_of_non_positive_names_row():
    df = pd.DataFrame({"state": ["A", "A", "B", "B"], "year": [1, 2, 1, 2],
                       "y": [1.0, 2.0, 3.0, 4.0], "x": [1.0, 2.0, 0.0, 3.0]})
    plan = _plan(ColumnSpec("y", "level", "none", ("response",)), ColumnSpec("x", "log", "none", ("frontier",)))
    with pytest.raises(DataError, match=r"'x'.*row 2 \(B, 1\)"):
        apply_transforms(Panel(df), plan)


def test_design_matrix_invariants(small_dgp):
    cfg, panel, _ = small_dgp
    dm = apply_transforms(panel, cfg.plan())
    assert dm.n_obs == panel.n_rows
    assert np.all(np.abs(dm.X.mean()) < 1e-10)
    assert dm.D.shape[1] == cfg.n_years - 1
    assert set(np.unique(dm.D.to_numpy())) <= {0.0, 1.0}
    for c in dm.D.columns:
        assert dm.D[c].sum() == np.sum(dm.year_ids == int(c[1:]))
    assert f"y{cfg.first_year}" not in dm.D.columns
    # re-centring a centred column changes nothing of note
    x = dm.X["price"].to_numpy()
    assert np.max(np.abs((x - x.mean()) - x)) < 1e-12


def test_baseline_plan():
    plan = TransformPlan.baseline()
    logged = {c.name for c in plan.columns if c.transform == "log" and c.center == "pooled-mean"}
    level = {c.name for c in plan.columns if c.transform == "level"}
    assert logged == {"price", "gdp_pc", "vmt_pc", "comsurf_pc", "ressurf_pc", "eint_ind", "ffelec_pc"}
    assert level == {"eff", "hdd", "cdd", "ff_pc"}
    assert len(plan.with_role("frontier")) == 11
    assert plan.with_role("inefficiency") == ["price", "gdp_pc", "eff"]
    assert plan.response == "energy_pc"


def test_plan_file_round_trip(tmp_path):
    plan = TransformPlan.baseline()
    t = tmp_path / "plan.toml"
    t.write_text(plan.to_toml())
    j = tmp_path / "plan.json"
    j.write_text(json.dumps(plan.to_dict()))
    assert TransformPlan.from_file(t) == plan
    assert TransformPlan.from_file(j) == plan


def test_plan_requires_single_response():
    with pytest.raises(DataError, match="exactly one response"):
        _plan(ColumnSpec("a", roles=("frontier",)))
    with pytest.raises(DataError, match="unknown role"):
        ColumnSpec("a", roles=("banana",))
    with pytest.raises(DataError):
        ColumnSpec("a", transform="sqrt")


def test_role_aliases():
    c = ColumnSpec("a", roles=("frontier-regressor", "inefficiency-regressor"))
    assert c.roles == ("frontier", "inefficiency")


def _grid_panel(units, years, seed=0):
    rng = np.random.default_rng(seed)
    n = len(units) * len(years)
    return Panel(pd.DataFrame({
        "state": np.repeat(units, len(years)),
        "year": np.tile(years, len(units)),
        "y": rng.lognormal(size=n),
        "x": rng.normal(size=n),
    }))


@pytest.mark.parametrize("name,rows", [("excl_fossil", 782), ("excl_crisis", 714),
                                       ("excl_industrial", 782), ("early", 408), ("recent", 459)])
def test_subset_row_counts(name, rows):
    panel = _grid_panel(list(STATE_CODES), list(range(2006, 2023)))
    assert panel.n_rows == 867
    assert filter_subset(panel, SUBSETS[name]).n_rows == rows


def test_subset_recentres_and_reference_year():
    panel = _grid_panel(list(STATE_CODES), list(range(2006, 2023)))
    plan = _plan(ColumnSpec("y", "log", "none", ("response",)), ColumnSpec("x", "level", "pooled-mean", ("frontier",)))
    dm = apply_transforms(filter_subset(panel, SUBSETS["recent"]), plan)
    assert abs(dm.X["x"].mean()) < 1e-10
    assert dm.D.columns[0] == "y2015"


def test_subset_errors():
    panel = _grid_panel(["A", "B"], [2000, 2001])
    with pytest.raises(DataError, match="absent"):
        filter_subset(panel, SubsetRule(exclude_units=("ZZ",)))
    with pytest.raises(DataError, match="every observation"):
        filter_subset(panel, SubsetRule(year_min=2010))


def test_mundlak_adds_one_mean_per_regressor(full_dgp):
    cfg, panel, _ = full_dgp
    dm = mundlak_augment(apply_transforms(panel, cfg.plan()))
    assert len(dm.mundlak_columns) == len(cfg.beta)
    for c in dm.mundlak_columns:
        assert abs(dm.X[c].mean()) < 1e-10
        assert dm.meta[c]["source"] in cfg.beta


def test_mundlak_flags_time_invariant_column():
    panel = _grid_panel(["A", "B", "C"], [1, 2, 3])
    df = panel.frame.copy()
    df["z"] = np.repeat([1.0, 2.0, 5.0], 3)
    plan = _plan(ColumnSpec("y", "log", "none", ("response",)),
                 ColumnSpec("x", "level", "pooled-mean", ("frontier",)),
                 ColumnSpec("z", "level", "pooled-mean", ("frontier",)))
    with pytest.warns(UserWarning, match="constant within every unit"):
        dm = mundlak_augment(apply_transforms(Panel(df), plan))
    assert dm.mundlak_columns == ("mean_x",)


def test_mundlak_matches_dummy_variable_oracle():
    rng = np.random.default_rng(3)
    G, T = 6, 5
    unit = np.repeat(np.arange(G), T)
    a = rng.normal(size=G)[unit]
    x1 = a + rng.normal(size=G * T)
    x2 = rng.normal(size=G * T) - 0.5 * a
    y = 1.0 + 0.7 * x1 - 0.3 * x2 + 2.0 * a + 0.1 * rng.normal(size=G * T)
    df = pd.DataFrame({"state": [f"U{u}" for u in unit], "year": np.tile(np.arange(T), G),
                       "y": y, "x1": x1, "x2": x2})
    plan = _plan(ColumnSpec("y", "level", "none", ("response",)),
                 ColumnSpec("x1", "level", "pooled-mean", ("frontier",)),
                 ColumnSpec("x2", "level", "pooled-mean", ("frontier",)))
    dm = mundlak_augment(apply_transforms(Panel(df), plan))
    A = np.column_stack([np.ones(G * T), dm.X.to_numpy()])
    mundlak = ols_fit(A, dm.y).coef[1:3]
    dummies = (unit[:, None] == np.arange(G)).astype(float)
    lsdv = np.linalg.lstsq(np.column_stack([x1, x2, dummies]), y, rcond=None)[0][:2]
    np.testing.assert_allclose(mundlak, lsdv, rtol=0, atol=1e-10)


def test_relabel_units_makes_distinct_clusters():
    panel = _grid_panel(["A", "B", "C"], [1, 2])
    rep = relabel_units(panel, ["A", "A", "C"])
    assert rep.units == ["A#0", "A#1", "C#0"]
    np.testing.assert_array_equal(rep.frame.loc[rep.unit_ids == "A#1", "x"],
                                  panel.frame.loc[panel.unit_ids == "A", "x"])
