import numpy as np
import pytest
from scipy import stats

from smartmrt.sim import (SimConfig, mrt_probability, rep_rng, simulate, simulate_batch,
                          simulate_one)
from smartmrt.truth import responder_probability


def test_same_seed_same_data():
    cfg = SimConfig(n=30, seed=4)
    a = simulate(cfg, rep_rng(4, 2))
    b = simulate(cfg, rep_rng(4, 2))
    for name in ("z1", "r", "z2", "a", "y", "x"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_streams_differ_by_rep_and_domain():
    cfg = SimConfig(n=30)
    y0 = simulate(cfg, rep_rng(1, 0)).y
    assert not np.array_equal(y0, simulate(cfg, rep_rng(1, 1)).y)
    assert not np.array_equal(y0, simulate(cfg, rep_rng(1, 0, "truth")).y)
    assert not np.array_equal(y0, simulate(cfg, rep_rng(2, 0)).y)


def test_batch_is_order_free():
    cfg = SimConfig(n=10, reps=3, seed=5)
    batch = dict(simulate_batch(cfg))
    again = simulate_one(cfg, rep_rng(5, 2))
    np.testing.assert_array_equal(batch[2].y, again.y)


def test_t_stop_keeps_draws():
    cfg = SimConfig(n=20)
    full = simulate(cfg, rep_rng(0, 0))
    part = simulate(cfg, rep_rng(0, 0), t_stop=16)
    np.testing.assert_array_equal(full.y[:, :16], part.y[:, :16])
    assert np.isnan(part.y[:, 16:]).all()


def test_forcing_regime_and_treatment():
    cfg = SimConfig(n=200)
    out = simulate(cfg, rep_rng(0, 0), regime=(-1, 1), force_a=(16, 1))
    assert np.all(out.z1 == -1)
    assert np.all(out.z2 == np.where(out.r == 1, 0, 1))
    assert np.all(out.a[:, 15] == 1)


def test_responders_are_not_rerandomized():
    out = simulate(SimConfig(n=500), rep_rng(0, 0))
    assert np.all(out.z2[out.r == 1] == 0)
    assert set(np.unique(out.z2[out.r == 0])) == {-1, 1}


def test_scenario_one_rates():
    out = simulate(SimConfig(n=20_000), rep_rng(0, 0))
    for z1, rate in ((1, 0.6), (-1, 0.45)):
        r = out.r[out.z1 == z1]
        assert abs(r.mean() - rate) < 4 * np.sqrt(rate * (1 - rate) / len(r))
    assert abs(out.a.mean() - 0.5) < 0.005
    np.testing.assert_array_equal(out.p, 0.5)


def test_scenario_two_rates_match_exact_enumeration():
    cfg = SimConfig(scenario="II", n=40_000)
    out = simulate(cfg, rep_rng(0, 0))
    for z1 in (1, -1):
        rate = responder_probability(cfg, z1)
        r = out.r[out.z1 == z1]
        assert abs(r.mean() - rate) < 4 * np.sqrt(rate * (1 - rate) / len(r))


def test_scenario_two_randomization_probabilities():
    assert mrt_probability("II", 1, 0, False) == pytest.approx(0.6)
    assert mrt_probability("II", -1, 0, False) == pytest.approx(0.4)
    assert mrt_probability("II", 1, 1, True) == pytest.approx(0.4)
    assert mrt_probability("II", -1, -1, True) == pytest.approx(0.6)
    assert mrt_probability("II", 1, 0, True) == pytest.approx(0.6)
    cfg = SimConfig(scenario="II")
    assert cfg.design().mrt_prob[(1, 2, -1)] == pytest.approx(0.8)


def test_ar1_error_structure():
    cfg = SimConfig(n=20_000, ar_var=0.5, ar_decay=0.5)
    eps = simulate(cfg, rep_rng(0, 0)).eps
    assert np.var(eps[:, 30]) == pytest.approx(0.5, rel=0.05)
    lag1 = np.corrcoef(eps[:, 30], eps[:, 31])[0, 1]
    lag4 = np.corrcoef(eps[:, 30], eps[:, 34])[0, 1]
    assert lag1 == pytest.approx(np.sqrt(0.5), abs=0.03)
    assert lag4 == pytest.approx(0.25, abs=0.03)
    assert stats.normaltest(eps[:5000, 10]).pvalue > 1e-4


def test_zero_noise_outcome_is_deterministic_given_draws():
    cfg = SimConfig(n=5)
    out = simulate(cfg, rep_rng(0, 0), zero_noise=True)
    assert np.all(out.eps == 0)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(scenario="III")
    with pytest.raises(ValueError):
        SimConfig(beta_star=(1, 2))
    with pytest.raises(ValueError):
        SimConfig(ar_decay=1.5)
    assert SimConfig(scenario="2").scenario == "II"


def test_trial_data_view():
    cfg = SimConfig(n=4, t_max=6, t_star=3)
    data = simulate_one(cfg, rep_rng(0, 0))
    assert data.n == 4 and data.n_rows == 24
    assert data.ids[0] == "00001" and data.x_names == ("state",)
    data.validate(cfg.design())
