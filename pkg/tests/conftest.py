import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from energyfrontier.lmdi import SECTORS, SectorSeries
from energyfrontier.panel import apply_transforms
from energyfrontier.sfa import fit_mle
from energyfrontier.synth import DgpConfig, generate_dgp

DATA = Path(__file__).parent / "data"


def make_sector_series(n_units=4, years=range(2006, 2012), seed=0, alpha=0.4, beta=0.1,
                       noise=0.0, sectors=SECTORS):
    """Long sector table with a known climate response in residential/commercial."""
    rng = np.random.default_rng(seed)
    rows = []
    years = list(years)
    for i in range(n_units):
        hdd = np.exp(rng.normal(1.5, 0.3) + rng.normal(0, 0.15, len(years)))
        cdd = np.exp(rng.normal(0.2, 0.4) + rng.normal(0, 0.2, len(years)))
        for s in sectors:
            a_i = rng.normal(0, 0.5)
            act = np.exp(rng.normal(0, 0.3) + np.cumsum(rng.normal(0, 0.02, len(years))))
            for k, t in enumerate(years):
                ln_int = a_i + 0.01 * k + noise * rng.standard_normal()
                if s in ("residential", "commercial"):
                    ln_int += alpha * np.log(hdd[k]) + beta * np.log(cdd[k])
                rows.append({"unit": f"S{i}", "year": t, "sector": s,
                             "energy": act[k] * np.exp(ln_int), "activity": act[k],
                             "hdd": hdd[k], "cdd": cdd[k]})
    return SectorSeries(pd.DataFrame(rows))


@pytest.fixture(scope="session")
def small_dgp():
    cfg = DgpConfig(n_units=30, n_years=8, seed=11)
    panel, truth = generate_dgp(cfg)
    return cfg, panel, truth


@pytest.fixture(scope="session")
def full_dgp():
    cfg = DgpConfig(seed=2024)
    panel, truth = generate_dgp(cfg)
    return cfg, panel, truth


@pytest.fixture(scope="session")
def full_fit(full_dgp):
    cfg, panel, truth = full_dgp
    dm = apply_transforms(panel, cfg.plan())
    return dm, fit_mle(dm)


@pytest.fixture
def fixture_csv():
    return DATA / "panel_3x4.csv"


_ACCEPTANCE = {}
N_CRITERIA = 10


@pytest.fixture
def acceptance_report():
    def report(number, ok, detail=""):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(_ACCEPTANCE.get(n, f"criterion {n:2d}: SKIP  not run"))


def pytest_report_header(config):
    return f"replication panel: {os.environ.get('ENERGYFRONTIER_PANEL', 'not supplied')}"
