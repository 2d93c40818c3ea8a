import numpy as np
import pytest

from smartmrt.baselines import baseline_contrast, fit_wcls, fit_wr
from smartmrt.design import DesignSpec, TrialData
from smartmrt.errors import ContrastError
from smartmrt.model import ModelSpec, example1_spec
from smartmrt.sim import SimConfig, rep_rng, simulate_one
from smartmrt.truth import true_effect_analytic

from conftest import brute_force_wls, make_trial


def test_wr_constant_outcome():
    data, design = make_trial(n=30, T=6, t_star=3, seed=1)
    const = TrialData(data.ids, data.pid, data.t, data.z1, data.r, data.z2, data.i, data.a,
                      data.p, np.full(data.n_rows, 2.5), data.x, data.x_names)
    fit = fit_wr(const, design, example1_spec())
    np.testing.assert_allclose(fit.gamma, [2.5, 0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(fit.vcov, 0, atol=1e-20)


def test_wcls_matches_brute_force(sim_scenario1):
    cfg, data = sim_scenario1
    spec = example1_spec()
    fit = fit_wcls(data, cfg.design(), spec)
    z1, z2, t = data.z1, data.z2, data.t
    st2 = (t >= cfg.t_star).astype(float)
    f = np.c_[np.ones_like(z1), z1, st2 * z2, st2 * z1 * z2]
    g = np.c_[data.x[:, 0], data.x[:, 0] * z1]
    X = np.hstack([g, (data.a - 0.5)[:, None] * f])
    np.testing.assert_allclose(fit.coeffs, brute_force_wls(X, data.y, np.ones(len(t))),
                               rtol=1e-10)
    assert fit.names[:2] == ("alpha[x(state)]", "alpha[x(state)*d1]")


def test_wcls_with_main_effect_controls(sim_scenario1):
    cfg, data = sim_scenario1
    fit = fit_wcls(data, cfg.design(), example1_spec(), controls="m+g")
    assert len(fit.block("eta")) == 4
    c = baseline_contrast(fit, "ID", ((1, 1), (-1, 1)), 1, 20)
    assert np.isfinite(c.se)
    with pytest.raises(ValueError):
        fit_wcls(data, cfg.design(), example1_spec(), controls="none")


def test_baseline_contrast_targets(sim_scenario1):
    cfg, data = sim_scenario1
    wcls = fit_wcls(data, cfg.design(), example1_spec())
    wr = fit_wr(data, cfg.design(), example1_spec())
    with pytest.raises(ContrastError):
        baseline_contrast(wr, "IA", ((1, 1),), None, 20)
    with pytest.raises(ContrastError):
        baseline_contrast(wcls, "AD", ((1, 1), (1, -1)), None, 20)
    with pytest.raises(ContrastError, match="main-effect"):
        baseline_contrast(wcls, "ID", ((1, 1), (-1, 1)), 1, 20)
    c = baseline_contrast(wr, "AD", ((1, 1), (-1, 1)), None, 20)
    assert c.estimate == pytest.approx(2 * wr.gamma[1] + 2 * wr.gamma[3])


def test_wcls_unbiased_under_full_factorial():
    # every person's (z1, z2) is a genuine regime draw, so substituting the
    # observed assignments into f targets the regime-fixed effect
    cfg = SimConfig(scenario="I", n=4000, smart_variant="I")
    data = simulate_one(cfg, rep_rng(9, 0, "test"))
    design = cfg.design()
    fit = fit_wcls(data, design, example1_spec())
    for d in ((1, 1), (-1, 1), (-1, -1)):
        c = baseline_contrast(fit, "IA", (d,), None, 16)
        truth = true_effect_analytic(cfg, "IA", 2, (d,))
        assert abs(c.estimate - truth) < 4 * c.se


def test_wcls_biased_under_restricted_design():
    cfg = SimConfig(scenario="I", n=4000)
    data = simulate_one(cfg, rep_rng(9, 0, "test"))
    fit = fit_wcls(data, cfg.design(), example1_spec())
    c = baseline_contrast(fit, "IA", ((-1, 1),), None, 16)
    truth = true_effect_analytic(cfg, "IA", 2, ((-1, 1),))
    assert c.estimate - truth > 4 * c.se


def test_wr_rank_deficiency_is_reported():
    data, design = make_trial(n=10, T=4, t_star=2, seed=1)
    from smartmrt.errors import RankDeficientError

    with pytest.raises(RankDeficientError):
        fit_wr(data, design, ModelSpec(f=["1"], m=["1", "stage1", "stage2"]))
