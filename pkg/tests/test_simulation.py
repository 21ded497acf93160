import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparse_poisson.core import DomainError, SpikeSlabPrior, optimal_scale
from sparse_poisson.predictive import PoissonPlugin, fit
from sparse_poisson.simulation import (
    MethodSpec,
    ScenarioSpec,
    TrialMetrics,
    compute_metrics,
    generate_trial,
    load_external_metrics,
    method_gamma_baseline,
    method_l1_plugin,
    method_proposed,
    resolve_scale,
    run_table,
    worker_count,
)


def test_exact_scenario_support_size():
    spec = ScenarioSpec(n=200, s=5, trials=3, seed=1)
    for t in range(3):
        trial = generate_trial(spec, t)
        assert np.count_nonzero(trial.theta) == 5
        np.testing.assert_array_equal(trial.ratios, 1.0)


def test_quasi_scenario_values():
    spec = ScenarioSpec(n=200, s=5, ratio=20.0, quasi_upper=1e-2, seed=2)
    trial = generate_trial(spec, 0)
    assert np.all(trial.theta > 0)
    assert np.count_nonzero(trial.theta <= 1e-2) == 195
    assert spec.sparsity_kind == "quasi"


def test_mcar_with_zero_probability_gives_unit_ratios():
    trial = generate_trial(ScenarioSpec(mcar=(5, 0.0), seed=3), 0)
    np.testing.assert_array_equal(trial.ratios, 1.0)


def test_mcar_ratio_range():
    trial = generate_trial(ScenarioSpec(n=2000, mcar=(4, 0.5), seed=3), 0)
    assert trial.ratios.min() >= 1 and trial.ratios.max() <= 5
    assert abs(trial.ratios.mean() - 3.0) < 0.15


def test_generate_trial_deterministic():
    spec = ScenarioSpec(seed=11)
    a, b = generate_trial(spec, 4), generate_trial(spec, 4)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    c = generate_trial(spec, 5)
    assert not np.array_equal(a.theta, c.theta)


def test_support_uniform_over_coordinates():
    spec = ScenarioSpec(n=10, s=3, seed=0)
    hits = np.zeros(10)
    for t in range(3000):
        hits += generate_trial(spec, t).theta > 0
    # each coordinate is in S with probability s / n
    expected = 3000 * 0.3
    assert np.all(np.abs(hits - expected) < 4 * math.sqrt(expected * 0.7))


@pytest.mark.parametrize("bad", [dict(s=0), dict(s=200), dict(trials=0), dict(ratio=-1.0),
                                 dict(mcar=(2, 1.5)), dict(quasi_upper=0.0)])
def test_scenario_validation(bad):
    with pytest.raises(DomainError):
        ScenarioSpec(**bad)


def test_scenario_dict_round_trip():
    spec = ScenarioSpec(n=50, s=3, mcar=(1, 0.9), trials=7, seed=5)
    assert ScenarioSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(DomainError):
        ScenarioSpec.from_dict({"n": 10, "bogus": 1})


def test_proposed_scale_for_table1_setting():
    x = np.zeros(200, dtype=int)
    x[:5] = [8, 12, 9, 11, 10]
    d = method_proposed(x, 1.0, 0.1)
    assert d.scale == pytest.approx(0.39240 * 0.025, rel=1e-4)
    assert d.scale == pytest.approx(0.0098100, rel=1e-4)


def test_fixed_scale_is_oracle_prior():
    x = np.array([0, 3, 0, 7])
    d = method_proposed(x, 2.0, 0.5, scale_rule="fixed:0.25")
    ref = fit(x, SpikeSlabPrior.power(0.25, 0.5), 2.0)
    np.testing.assert_allclose(d.log_omega, ref.log_omega)
    np.testing.assert_allclose(d.mean(), ref.mean())


def test_lbar_equals_lstar_for_equal_ratios():
    r = np.full(30, 3.0)
    assert resolve_scale("auto-lbar", r, 0.7, 0.1) == pytest.approx(
        resolve_scale("auto-lstar", r, 0.7, 0.1), rel=1e-12)
    assert resolve_scale("scale:2", r, 0.7, 0.1) == pytest.approx(0.2)


def test_lstar_rejects_unequal_ratios():
    with pytest.raises(DomainError):
        resolve_scale("auto-lstar", [1.0, 2.0], 1.0, 0.1)


@pytest.mark.parametrize("rule", ["fixed:-1", "scale:x", "nope:1", "fixed:inf"])
def test_bad_scale_rules(rule):
    with pytest.raises(DomainError):
        resolve_scale(rule, [1.0], 1.0, 0.1)


def test_l1_plugin_estimates():
    plug = method_l1_plugin([0, 5, 11], 1.0, 0.1)
    np.testing.assert_allclose(plug.mean(), [0.0, 5 / 1.1, 10.0])
    assert plug.mean()[1] == pytest.approx(4.5455, abs=1e-4)
    assert plug.coord_pmf(0, 0) == 1.0
    assert plug.coord_pmf(0, 1) == 0.0
    with pytest.raises(DomainError):
        method_l1_plugin([1], 1.0, 0.0)


def test_gamma_baseline():
    x = np.array([0, 2, 6])
    base = method_gamma_baseline(x, 1.0, 1.0)
    prop = method_proposed(x, 1.0, 1.0, scale_rule="fixed:0.05")
    assert base.mean()[0] == pytest.approx(1.0)
    np.testing.assert_allclose(base.coord_pmf(1, np.arange(20)), prop.coord_pmf(1, np.arange(20)))
    assert base.p_zero()[0] < prop.p_zero()[0]


def test_method_spec_names_and_validation():
    assert MethodSpec("proposed", kappa=0.1).name == "proposed(kappa=0.1)"
    assert MethodSpec("l1").name == "l1(lambda=0.1)"
    with pytest.raises(DomainError):
        MethodSpec("k04")
    with pytest.raises(DomainError):
        MethodSpec.from_dict({"kind": "l1", "extra": 1})


def test_metrics_zero_distance():
    plug = PoissonPlugin(theta_hat=np.array([0.0, 2.0, 5.0]))
    m = compute_metrics(plug, [0, 2, 5], [1.0, 1.0, 1.0], m_cal=10_000)
    assert m.l1 == 0.0 and m.weighted_l1 == 0.0
    assert math.isfinite(m.pll)


@settings(max_examples=25)
@given(st.lists(st.integers(0, 30), min_size=2, max_size=20), st.floats(0.5, 30.0))
def test_weighted_equals_plain_for_equal_ratios(x, r):
    x = np.asarray(x)
    d = method_proposed(x, r, 1.0, scale_rule="fixed:0.1")
    y = x[::-1].copy()
    m = compute_metrics(d, y, np.full(x.size, r), m_cal=1000)
    assert m.weighted_l1 == pytest.approx(m.l1, rel=1e-12, abs=1e-12)
    assert m.l1 >= 0


def test_weighted_l1_normalisation():
    plug = PoissonPlugin(theta_hat=np.array([1.0, 1.0]))
    m = compute_metrics(plug, [2, 3], [1.0, 3.0], m_cal=1000)
    # (1 * 1 + 3 * 2) / ((1 + 3) / 2)
    assert m.weighted_l1 == pytest.approx(3.5)


def test_degenerate_plugin_metrics():
    plug = method_l1_plugin([0, 4, 0], 1.0, 0.1)
    m = compute_metrics(plug, [1, 4, 0], 1.0, m_cal=10_000, set_kind="equal-tail")
    assert m.pll == -math.inf
    assert m.covered is False
    # an l1 ball can still hold y, but the likelihood stays degenerate
    ball = compute_metrics(plug, [1, 4, 0], 1.0, m_cal=10_000, set_kind="l1-ball")
    assert ball.pll == -math.inf


def test_unknown_set_kind():
    plug = PoissonPlugin(theta_hat=np.array([1.0]))
    with pytest.raises(DomainError):
        compute_metrics(plug, [1], 1.0, set_kind="hpd")


SMALL = ScenarioSpec(n=60, s=3, ratio=1.0, trials=6, seed=99)
METHODS = [MethodSpec("proposed", kappa=0.1), MethodSpec("l1"), MethodSpec("gamma", kappa=1.0)]


@pytest.fixture(scope="module")
def serial_table():
    return run_table(SMALL, METHODS, m_cal=5000, workers=1)


def test_run_table_independent_of_workers(serial_table):
    parallel = run_table(SMALL, METHODS, m_cal=5000, workers=3)
    assert parallel.to_csv() == serial_table.to_csv()


def test_run_table_rows(serial_table):
    rows = {(r.method, r.metric): r for r in serial_table.rows}
    assert len(rows) == 12
    for row in serial_table.rows:
        if math.isfinite(row.mean):
            assert row.sd is not None and row.sd >= 0
    cov = rows[("proposed(kappa=0.1)", "coverage")].mean
    assert 0 <= cov <= 100
    assert rows[("l1(lambda=0.1)", "l1")].mean >= 0


def test_minus_inf_reported(serial_table):
    per = serial_table.per_trial["l1(lambda=0.1)"]
    if any(m.pll == -math.inf for m in per):
        assert serial_table.row("l1(lambda=0.1)", "pll").mean == -math.inf
        assert "l1(lambda=0.1),pll,-Inf," in serial_table.to_csv()
        assert serial_table.row("proposed(kappa=0.1)", "pll").mean > -math.inf


def test_single_trial_has_no_sd():
    res = run_table(ScenarioSpec(n=30, s=2, trials=1, seed=0), [MethodSpec("proposed")],
                    m_cal=2000, workers=1)
    row = res.row("proposed(kappa=0.1)", "l1")
    assert row.sd is None
    assert "proposed(kappa=0.1),l1," in res.to_csv()
    line = [ln for ln in res.to_csv().splitlines() if ln.startswith("proposed(kappa=0.1),l1,")][0]
    assert line.endswith(",")


def test_run_table_rejects_duplicates():
    with pytest.raises(DomainError):
        run_table(SMALL, [MethodSpec("l1"), MethodSpec("l1")], workers=1)


def test_external_metrics(tmp_path, serial_table):
    path = tmp_path / "k04.csv"
    path.write_text("# external\nl1,weighted_l1,pll,covered\n3.5,3.5,-10.0,1\n4.5,4.5,-Inf,0\n")
    metrics = load_external_metrics(path)
    assert metrics[0] == TrialMetrics(3.5, 3.5, -10.0, True)
    assert metrics[1].pll == -math.inf and metrics[1].covered is False
    res = run_table(ScenarioSpec(n=30, s=2, trials=2, seed=0), [MethodSpec("l1")],
                    m_cal=2000, workers=1, external=[("K04", str(path))])
    assert res.row("K04", "l1").mean == pytest.approx(4.0)
    assert res.row("K04", "coverage").mean == pytest.approx(50.0)
    assert res.row("K04", "pll").mean == -math.inf


def test_external_metrics_empty(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("l1,weighted_l1,pll,covered\n")
    with pytest.raises(DomainError):
        load_external_metrics(path)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("SPARSE_POISSON_THREADS", "2")
    assert worker_count() == 2
    assert worker_count(8) == 2
    monkeypatch.delenv("SPARSE_POISSON_THREADS")
    assert worker_count(3) == 3


@pytest.mark.slow
def test_quasi_scenario_matches_reported_table():
    # reported quasi-sparse (200, 5, 20) row: l1 13.8, PLL -19.0, coverage 90.7 %
    name = "proposed(kappa=0.1)"
    res = run_table(ScenarioSpec(ratio=20.0, quasi_upper=1e-2, trials=500, seed=20240101),
                    [MethodSpec("proposed", kappa=0.1)])
    assert abs(res.row(name, "l1").mean - 13.8) < 2.0
    assert abs(res.row(name, "pll").mean + 19.0) < 1.5
    assert abs(res.row(name, "coverage").mean - 90.7) < 3.0
