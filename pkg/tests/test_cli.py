import json

import numpy as np
import pandas as pd
import pytest

from conftest import DATA, make_sector_series
from energyfrontier import __version__
from energyfrontier.cli import main


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out-dir", str(out), "--seed", "3", "--units", "20", "--years", "6"]) == 0
    return out


def _read_csv(path):
    return pd.read_csv(path, comment="#")


def test_simulate_artifacts(sim):
    assert {p.name for p in sim.iterdir()} == {"panel.csv", "truth.json", "plan.toml"}
    doc = json.loads((sim / "truth.json").read_text())
    assert doc["meta"]["version"] == __version__ and doc["meta"]["seed"] == 3
    assert len(doc["meta"]["config_hash"]) == 16
    assert len(_read_csv(sim / "panel.csv")) == 120


def test_sfa_happy_path_and_idempotent(sim, tmp_path):
    args = ["sfa", "--input", str(sim / "panel.csv"), "--plan", str(sim / "plan.toml")]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("sfa_coefficients.json", "sfa_scores.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    doc = json.loads((tmp_path / "a" / "sfa_coefficients.json").read_text())
    names = {(c["equation"], c["name"]) for c in doc["coefficients"]}
    assert ("frontier", "price") in names and ("inefficiency", "eff") in names
    for key in ("loglik", "sigma_v", "lambda", "mean_expected_u", "expected_u_at_mean_z"):
        assert key in doc["diagnostics"]
    assert set(doc["variance_shares"]) >= {"s_F", "s_U", "s_V"}
    scores = _read_csv(tmp_path / "a" / "sfa_scores.csv")
    assert list(scores.columns[:2]) == ["state", "year"] and len(scores) == 120
    first = (tmp_path / "a" / "sfa_scores.csv").read_text().splitlines()[0]
    assert doc["meta"]["config_hash"] in first


def test_hash_changes_with_config(sim, tmp_path):
    base = ["sfa", "--input", str(sim / "panel.csv"), "--plan", str(sim / "plan.toml")]
    main(base + ["--out-dir", str(tmp_path / "a")])
    main(base + ["--mundlak", "--out-dir", str(tmp_path / "b")])
    ha = json.loads((tmp_path / "a" / "sfa_coefficients.json").read_text())["meta"]["config_hash"]
    hb = json.loads((tmp_path / "b" / "sfa_coefficients.json").read_text())["meta"]["config_hash"]
    assert ha != hb


def test_unknown_flag_exits_1_with_usage(sim, capsys):
    rc = main(["sfa", "--input", str(sim / "panel.csv"), "--bogus"])
    err = capsys.readouterr().err
    assert rc == 1 and "usage:" in err and "--bogus" in err


def test_unknown_subcommand_exits_1(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "ENERGYFRONTIER_THREADS" in out
    for sub in ("lmdi", "sfa", "importance", "bootstrap", "simulate", "scenario"):
        assert sub in out


def test_missing_input_exits_1(tmp_path, capsys):
    assert main(["sfa", "--input", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)]) == 1
    assert "data error" in capsys.readouterr().err


def test_collinear_plan_exits_2(sim, tmp_path, capsys):
    df = _read_csv(sim / "panel.csv")
    df["gdp_copy"] = 2.0 * df["gdp_pc"]
    df.to_csv(tmp_path / "collinear.csv", index=False)
    rc = main(["sfa", "--input", str(tmp_path / "collinear.csv"), "--plan", str(DATA / "collinear_plan.toml"),
               "--out-dir", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert rc == 2
    assert "numerical failure" in err and "gdp" in err


def test_non_convergence_exits_2_with_trace(sim, tmp_path, capsys, monkeypatch):
    import energyfrontier.sfa.estimator as est

    orig = est.StochasticFrontier.__init__

    def short(self, max_iter=500, **kw):
        orig(self, max_iter=2, **kw)

    monkeypatch.setattr(est.StochasticFrontier, "__init__", short)
    rc = main(["sfa", "--input", str(sim / "panel.csv"), "--plan", str(sim / "plan.toml"),
               "--out-dir", str(tmp_path)])
    err = capsys.readouterr().err
    assert rc == 2 and "did not converge" in err and '"stage": "bfgs"' in err


def test_importance_command(sim, tmp_path):
    rc = main(["importance", "--input", str(sim / "panel.csv"), "--plan", str(sim / "plan.toml"),
               "--out-dir", str(tmp_path), "--trees", "20"])
    assert rc == 0
    tab = _read_csv(tmp_path / "importance.csv")
    assert list(tab.columns) == ["variable", "frontier_share", "ineff_share", "combined", "method",
                                 "ci_low", "ci_high"]
    lmg = tab[tab["method"] == "lmg"]
    assert lmg["frontier_share"].sum() == pytest.approx(1.0, abs=1e-12)


@pytest.fixture(scope="module")
def sim_medium(tmp_path_factory):
    # small panels hit the sigma_v -> 0 boundary in some replicates
    out = tmp_path_factory.mktemp("sim_medium")
    assert main(["simulate", "--out-dir", str(out), "--seed", "3", "--units", "40", "--years", "8"]) == 0
    return out


def test_bootstrap_command_thread_independent(sim_medium, tmp_path, monkeypatch):
    sim = sim_medium
    args = ["bootstrap", "--input", str(sim / "panel.csv"), "--plan", str(sim / "plan.toml"),
            "--B", "6", "--seed", "3", "--stats", "sfa,scenario"]
    monkeypatch.setenv("ENERGYFRONTIER_THREADS", "1")
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("ENERGYFRONTIER_THREADS", "2")
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("bootstrap_draws.csv", "bootstrap_ci.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    doc = json.loads((tmp_path / "a" / "bootstrap_ci.json").read_text())
    stats = {r["statistic"] for r in doc["intervals"]}
    assert "scenario:price_convergence" in stats and doc["B"] == 6
    assert doc["n_failed"] == len(doc["failures"])


def test_bootstrap_bad_stats_exits_1(sim, tmp_path):
    assert main(["bootstrap", "--input", str(sim / "panel.csv"), "--plan", str(sim / "plan.toml"),
                 "--stats", "nope", "--out-dir", str(tmp_path)]) == 1


def test_bad_threads_env_exits_1(sim, tmp_path, monkeypatch):
    monkeypatch.setenv("ENERGYFRONTIER_THREADS", "many")
    assert main(["importance", "--input", str(sim / "panel.csv"), "--plan", str(sim / "plan.toml"),
                 "--out-dir", str(tmp_path), "--no-rf"]) == 1


def test_scenario_command(tmp_path, capsys):
    assert main(["scenario", "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "scenario.json").read_text())
    assert doc["price_convergence"] == pytest.approx(0.145, abs=1e-3)
    assert doc["policy_gap_linear"] == pytest.approx(0.048, abs=1e-3)
    assert doc["half_gap"] == pytest.approx(0.0535, abs=1e-4)


def test_scenario_from_fit(sim, tmp_path):
    main(["sfa", "--input", str(sim / "panel.csv"), "--plan", str(sim / "plan.toml"), "--out-dir", str(tmp_path)])
    assert main(["scenario", "--from-fit", str(tmp_path / "sfa_coefficients.json"), "--out-dir", str(tmp_path)]) == 0
    fit = json.loads((tmp_path / "sfa_coefficients.json").read_text())
    sc = json.loads((tmp_path / "scenario.json").read_text())
    bp = next(c["estimate"] for c in fit["coefficients"] if c["name"] == "price" and c["equation"] == "frontier")
    assert sc["inputs"]["beta_p"] == bp


def test_lmdi_command(tmp_path):
    s = make_sector_series(seed=1, noise=0.05)
    df = s.frame.rename(columns={"unit": "state", "energy": "energy_pc", "activity": "activity_pc"})
    df.to_csv(tmp_path / "sectors.csv", index=False)
    rc = main(["lmdi", "--input", str(tmp_path / "sectors.csv"), "--out-dir", str(tmp_path / "o"), "--chained"])
    assert rc == 0
    tab = _read_csv(tmp_path / "o" / "lmdi.csv")
    assert list(tab.columns) == ["unit", "factor", "sector", "period", "effect", "pp_contribution"]
    agg = tab[(tab["sector"] == "all") & (tab["factor"] != "total")]
    total = tab[tab["factor"] == "total"]["effect"].iloc[0]
    assert np.prod(agg["effect"]) == pytest.approx(total, rel=1e-12)
    ch = _read_csv(tmp_path / "o" / "lmdi_chained.csv")
    np.testing.assert_allclose(ch["total"], ch["observed"], rtol=1e-12)
    rc = main(["lmdi", "--input", str(tmp_path / "sectors.csv"), "--out-dir", str(tmp_path / "u"), "--unit", "S1"])
    assert rc == 0
