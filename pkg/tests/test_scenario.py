import math

import pytest

from energyfrontier.exceptions import DataError
from energyfrontier.scenario import (
    per_capita_amount,
    scenario_half_gap,
    scenario_policy_gap,
    scenario_price_convergence,
)


def test_price_convergence():
    assert scenario_price_convergence(21.71, 25.51, -0.97) == pytest.approx(0.145, abs=1e-3)
    assert scenario_price_convergence(20.0, 20.0, -0.97) == 0.0
    assert scenario_price_convergence(20, 25, -1) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(DataError):
        scenario_price_convergence(0.0, 25.0, -1.0)


def test_policy_gap():
    lin, exact = scenario_policy_gap(25, -0.0019)
    assert lin == pytest.approx(0.0475, abs=1e-15)
    assert lin == pytest.approx(0.048, abs=1e-3)
    assert exact == pytest.approx(1 - math.exp(-0.0475), rel=1e-14)
    assert exact == pytest.approx(0.0464, abs=1e-4)
    assert scenario_policy_gap(0, -0.0019) == (0.0, 0.0)
    with pytest.raises(DataError):
        scenario_policy_gap(-1, -0.0019)


def test_half_gap():
    h = scenario_half_gap(0.11)
    assert h == pytest.approx(0.0535, abs=1e-4)
    assert per_capita_amount(h, 343.3) == pytest.approx(18.4, abs=0.05)
    # 18.2 lies within two percent of the value implied by the mean
    assert abs(per_capita_amount(h, 343.3) - 18.2) / 18.2 < 0.02
    assert scenario_half_gap(0.0) == 0.0
    assert scenario_half_gap(0.15) == pytest.approx(0.0723, abs=1e-4)
    with pytest.raises(DataError):
        scenario_half_gap(-0.1)
