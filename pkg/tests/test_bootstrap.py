import numpy as np
import pytest

from energyfrontier.bootstrap import (
    BootstrapPlan,
    _ReplicateBuilder,
    percentile_ci,
    resample_states,
    run_bootstrap,
)
from energyfrontier.exceptions import BootstrapFailureError, DataError
from energyfrontier.panel import apply_transforms, relabel_units
from energyfrontier.sfa import fit_mle
from energyfrontier.synth import STATE_CODES


def test_resample_is_deterministic_and_full_size():
    ids = np.repeat(np.array(STATE_CODES), 3)
    a = resample_states(ids, np.random.default_rng([4, 0]))
    b = resample_states(ids, np.random.default_rng([4, 0]))
    assert a == b and len(a) == 51
    with pytest.raises(DataError):
        resample_states(["A", "A"], np.random.default_rng(0))


def test_expected_distinct_units():
    units = np.array(STATE_CODES)
    rng = np.random.default_rng(123)
    counts = [len(set(resample_states(units, rng))) for _ in range(10_000)]
    expected = 51 * (1 - (50 / 51) ** 51)
    assert expected == pytest.approx(32.4, abs=0.05)
    assert abs(np.mean(counts) - expected) < 0.2


def test_percentile_rule():
    assert percentile_ci(np.arange(1, 101)) == pytest.approx((3.475, 97.525), abs=1e-12)
    assert percentile_ci(np.full(7, 2.5)) == (2.5, 2.5)
    x = np.arange(1.0, 101.0)
    x[::10] = np.nan
    assert percentile_ci(x) == percentile_ci(x[~np.isnan(x)])
    with pytest.raises(DataError):
        percentile_ci([np.nan, np.nan])
    lo95, hi95 = percentile_ci(np.arange(1, 101), 0.95)
    lo99, hi99 = percentile_ci(np.arange(1, 101), 0.99)
    assert lo99 <= lo95 and hi95 <= hi99


def test_plan_validation():
    with pytest.raises(ValueError):
        BootstrapPlan(B=0)
    with pytest.raises(ValueError):
        BootstrapPlan(stats=())
    with pytest.raises(ValueError):
        BootstrapPlan(stats=("nope",))


def test_replicate_builder_matches_relabel_and_transform(small_dgp):
    cfg, panel, _ = small_dgp
    plan = cfg.plan()
    builder = _ReplicateBuilder(panel, plan)
    draw = resample_states(panel.unit_ids, np.random.default_rng(9))
    fast = builder.build(draw)
    slow = apply_transforms(relabel_units(panel, draw), plan)
    np.testing.assert_allclose(fast.y, slow.y, atol=1e-14)
    np.testing.assert_allclose(fast.X.to_numpy(), slow.X.to_numpy(), atol=1e-14)
    np.testing.assert_allclose(fast.Z.to_numpy(), slow.Z.to_numpy(), atol=1e-14)
    np.testing.assert_array_equal(fast.D.to_numpy(), slow.D.to_numpy())
    np.testing.assert_array_equal(fast.unit_ids, slow.unit_ids)


def test_single_replicate_equals_manual_pipeline(small_dgp):
    cfg, panel, _ = small_dgp
    res = run_bootstrap(panel, cfg.plan(), bplan=BootstrapPlan(B=1, seed=3, stats=("sfa",)))
    draw = resample_states(panel.unit_ids, np.random.default_rng([3, 0]))
    fit = fit_mle(apply_transforms(relabel_units(panel, draw), cfg.plan()))
    assert res.draws.shape[0] == 1
    assert res.draws.loc[0, "beta:price"] == pytest.approx(fit.beta("price"), abs=1e-6)
    assert res.draws.loc[0, "gamma:eff"] == pytest.approx(fit.gamma("eff"), abs=1e-5)


def test_draws_independent_of_workers(small_dgp):
    cfg, panel, _ = small_dgp
    bp = dict(B=6, seed=11, stats=("sfa", "variance", "scenario"))
    a = run_bootstrap(panel, cfg.plan(), bplan=BootstrapPlan(n_jobs=1, **bp))
    b = run_bootstrap(panel, cfg.plan(), bplan=BootstrapPlan(n_jobs=2, **bp))
    assert a.draws.equals(b.draws)
    assert a.converged.sum() + a.n_failed == 6


def test_result_accounting_and_intervals(small_dgp):
    cfg, panel, _ = small_dgp
    res = run_bootstrap(panel, cfg.plan(), bplan=BootstrapPlan(B=25, seed=1, stats=("sfa", "diagnostics", "lmg")))
    assert len(res.draws) == 25
    ci = res.ci()
    assert np.all(ci["ci_low"] <= ci["ci_high"])
    row = ci.set_index("statistic").loc["beta:price"]
    assert row["ci_low"] < row["estimate"] < row["ci_high"]
    assert "combined:eff" in res.draws.columns


def test_failures_are_counted(small_dgp, monkeypatch):
    cfg, panel, _ = small_dgp
    import energyfrontier.bootstrap as bs
    from energyfrontier.exceptions import ConvergenceError

    real = bs.fit_mle
    calls = {"n": 0}

    def flaky(dm, spec=None, init=None, **kw):
        if init is not None:
            calls["n"] += 1
            if calls["n"] % 2 == 0:
                raise ConvergenceError("forced", trace=[])
        return real(dm, spec, init=init, **kw)

    monkeypatch.setattr(bs, "fit_mle", flaky)
    with pytest.raises(BootstrapFailureError) as exc:
        run_bootstrap(panel, cfg.plan(), bplan=BootstrapPlan(B=6, seed=0, stats=("sfa",)))
    assert exc.value.n_failed == 3
    calls["n"] = 0
    res = run_bootstrap(panel, cfg.plan(), bplan=BootstrapPlan(B=6, seed=0, stats=("sfa",), max_failure_rate=0.5))
    assert res.n_failed == 3 and res.draws.isna().all(axis=1).sum() == 3
    assert len(res.failures) == 3
