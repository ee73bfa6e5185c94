import math

import numpy as np
import pytest

from qgheat import alpha_engine as ae
from qgheat import bm_sim as bm
from qgheat import graph_model as gm
from qgheat.artifacts import CsvTable


def cfg(samples=20_000, dt=1e-3, horizon=1.0, seed=3, **kw):
    return bm.SimulationConfig(dt, horizon, samples, seed, **kw)


def test_time_zero_is_total_length():
    g = gm.pitchfork()
    est = bm.simulate_survival(g, cfg(2000), np.array([0.0, 0.1]))
    assert est.survival[0] == g.total_length and est.std_error[0] == 0


def test_dd_interval_against_series():
    g = gm.interval(both_dirichlet=True)
    t = np.array([0.05, 0.1, 0.2])
    est = bm.simulate_survival(g, cfg(100_000, horizon=0.2), t)
    exact = bm.interval_survival_series(t, 1.0, 2.0)
    assert np.all(np.abs(est.survival - exact) <= 3 * est.std_error)


def test_series_oracle_limits():
    assert bm.interval_survival_series(np.array([0.0]))[0] == pytest.approx(1.0, abs=1e-2)
    # slowest mode for sigma = 2 on the unit D-D interval: 8/pi^2 e^{-pi^2 t}
    t = 1.0
    assert bm.interval_survival_series(np.array([t]))[0] == pytest.approx(8 / math.pi**2 * math.exp(-math.pi**2 * t), rel=1e-8)


def test_survival_monotone_and_reproducible():
    g = gm.named_graph("path3")
    t = np.linspace(0.1, 1.0, 10)
    a = bm.simulate_survival(g, cfg(10_000), t)
    b = bm.simulate_survival(g, cfg(10_000), t)
    assert np.array_equal(a.survival, b.survival)
    assert np.all(np.diff(a.survival) <= 0)
    c = bm.simulate_survival(g, cfg(10_000, seed=4), t)
    assert not np.array_equal(a.survival, c.survival)


def test_halving_bias_below_one_se():
    # the coupled difference estimates the time-step bias; it carries its own noise diff_err
    t = np.array([0.1, 0.5, 1.0])
    for name in ("path3", "pitchfork", "cycle3_pendant"):
        coarse, fine, diff_err = bm.halving_study(gm.named_graph(name), cfg(20_000, dt=2e-3, block_size=1000), t)
        assert np.all(np.abs(coarse.survival - fine.survival) <= fine.std_error + 3 * diff_err), name
        assert np.all(diff_err < fine.std_error)


def test_halving_needs_blocks():
    with pytest.raises(bm.SimulationError):
        bm.halving_study(gm.pitchfork(), cfg(1000), np.array([0.1]))


def test_standard_error_scaling():
    g = gm.pitchfork()
    t = np.array([0.3])
    a = bm.simulate_survival(g, cfg(5_000), t)
    b = bm.simulate_survival(g, cfg(20_000), t)
    assert a.std_error[0] / b.std_error[0] == pytest.approx(2.0, rel=0.2)


def test_first_vertex_single_edge():
    vm = bm.first_vertex_distribution(gm.interval(), cfg(20_000, horizon=2.0))
    assert np.allclose(vm.expected, [0.5, 0.5])
    assert np.all(vm.z_scores() < 3)


def test_first_vertex_pitchfork():
    g = gm.pitchfork()
    vm = bm.first_vertex_distribution(g, cfg(100_000, horizon=2.0))
    masses = dict(zip(vm.vertices, vm.expected))
    assert masses["w"] == 1.5 and masses["a"] == 0.5 and masses["vD"] == 0.5
    assert np.all(vm.z_scores() < 3)
    assert vm.mass.sum() == pytest.approx(g.total_length)


def test_increments_report():
    rep = bm.empirical_increments(gm.pitchfork(), cfg(20_000, horizon=20.0), n_increments=3)
    assert set(rep.ks_against) == {"ONE_SIDED", "TWO_SIDED"}
    # the two-sided exit law is the one the walker realises
    assert rep.ks_against["TWO_SIDED"][1] > 0.01
    assert rep.ks_against["ONE_SIDED"][0] > 5 * rep.ks_against["TWO_SIDED"][0]
    assert rep.ks_identical[1] > 0.01
    assert rep.ks_first_pvalue > 0.01
    assert all(r < 0.1 for r in rep.independence)
    table = rep.to_csv()
    assert table.rows[0][0] == "ks_eta0_vs_alpha_zero"
    # eta_0 empirical CDF follows 1 - alpha_0/ell up to the time-step rounding
    t = np.array([0.02, 0.05, 0.1])
    assert np.allclose(rep.ecdf(0, t), ae.first_exit_cdf(t, 1.0), atol=0.02)


def test_distance_correlation():
    rng = np.random.default_rng(0)
    x = rng.random(2000)
    assert bm.distance_correlation(x, rng.random(2000)) < 0.1
    assert bm.distance_correlation(x, x**2) > 0.9


def test_validation():
    g = gm.pitchfork()
    with pytest.raises(bm.SimulationError):
        bm.simulate_survival(g, cfg(100, dt=0.05), np.array([0.1]))
    with pytest.raises(bm.SimulationError):
        bm.simulate_survival(g, cfg(100, horizon=0.5), np.array([1.0]))
    with pytest.raises(bm.SimulationError):
        bm.simulate_survival(g, cfg(0), np.array([0.1]))
    with pytest.raises(bm.SimulationError):
        bm.empirical_increments(g, cfg(100, horizon=5.0))
    uneven = gm.MetricGraph(["vD", "w", "a"], [("vD", "w", 1.0), ("w", "a", 0.5)], {"vD"})
    with pytest.raises(bm.SimulationError):
        bm.first_vertex_distribution(uneven, cfg(100))


def test_csv_round_trip():
    est = bm.simulate_survival(gm.pitchfork(), cfg(2000), np.array([0.1, 0.2]))
    text = est.to_csv().dumps()
    back = bm.SurvivalEstimate.from_csv(CsvTable.loads(text))
    assert back.to_csv().dumps() == text and back.config == est.config
