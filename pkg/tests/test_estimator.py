import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smartmrt.baselines import fit_wr
from smartmrt.design import DesignSpec, Trajectory, TrialData
from smartmrt.errors import RankDeficientError, ValidationError
from smartmrt.estimator import (fit_hybrid, fit_rows, fit_step1, fit_step2, predict_yhat,
                                step1_score, step2_score)
from smartmrt.model import ModelSpec, example1_spec, mbridge_spec, stage_split_spec
from smartmrt.rows import replicate
from smartmrt.sim import SimConfig, rep_rng, simulate_one

from conftest import make_trial


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["pooled", "stage", "time"]))
def test_estimating_equation_roots(seed, centering):
    data, design = make_trial(n=30, T=6, t_star=3, seed=seed, p=0.3)
    spec = example1_spec(g=("x(state)",), s=("x(state)",))
    rows = replicate(data, design, spec)
    fit = fit_step1(rows, centering)
    u1 = step1_score(rows, fit).mean(axis=0)
    scale = np.abs(fit.X).max() * np.abs(rows.y).max() * rows.w_s.max() * rows.w_m.max() * 6
    assert np.abs(u1).max() < 1e-8 * scale
    yhat = predict_yhat(fit, rows)
    gamma, _ = fit_step2(rows, yhat)
    u2 = step2_score(rows, yhat, gamma).mean(axis=0)
    assert np.abs(u2).max() < 1e-8 * scale


def test_replication_counts(small_trial):
    data, design = small_trial
    rows = replicate(data, design, example1_spec())
    z1, r, z2 = data.person_level()
    per_person = np.bincount(rows.pid, minlength=data.n) / 8
    np.testing.assert_array_equal(per_person, np.where(r == 1, 2, 1))
    assert set(np.unique(rows.w_s)) <= {2.0, 4.0}
    np.testing.assert_array_equal(rows.w_s, np.where(r[rows.pid] == 1, 2.0, 4.0))


def test_noise_free_recovery_full_factorial():
    rng = np.random.default_rng(1)
    T, ts, rho = 10, 5, 0.5
    beta = np.array([0.4, -0.3, 0.2, -0.1])
    eta = np.array([1.0, 0.5, -0.2, 0.3])
    trajs = []
    for k in range(60):
        z1, z2 = int(rng.choice([-1, 1])), int(rng.choice([-1, 1]))
        t = np.arange(1, T + 1)
        st2 = (t >= ts).astype(float)
        f = np.c_[np.ones(T), z1 * np.ones(T), st2 * z2, st2 * z1 * z2]
        a = (rng.random(T) < rho).astype(float)
        y = (a - rho) * (f @ beta) + f @ eta
        trajs.append(Trajectory(str(k), z1, int(rng.random() < .5), z2, t, np.ones(T), a,
                                np.full(T, rho), y))
    data = TrialData.from_trajectories(trajs)
    design = DesignSpec(smart_variant="I", t_star=ts, t_max=T)
    fit = fit_hybrid(data, design, example1_spec(g=()))
    np.testing.assert_allclose(fit.beta, beta, atol=1e-12)
    np.testing.assert_allclose(fit.eta, eta, atol=1e-12)


def test_mrt_weight_identity_when_rho_equals_p():
    data, design = make_trial(n=30, T=6, t_star=3, p=0.3, seed=4)
    spec = example1_spec(rho=0.3)
    rows = replicate(data, design, spec)
    np.testing.assert_array_equal(rows.w_m, 1.0)
    a = fit_rows(rows, design)
    b = fit_rows(rows.with_weights(w_m=np.ones(len(rows))), design)
    np.testing.assert_array_equal(a.vcov_full, b.vcov_full)
    np.testing.assert_array_equal(a.gamma, b.gamma)


def test_hybrid_equals_wr_when_mrt_weight_is_one(sim_scenario1):
    cfg, data = sim_scenario1
    for spec in (example1_spec(), stage_split_spec()):
        h = fit_hybrid(data, cfg.design(), spec)
        w = fit_wr(data, cfg.design(), spec)
        np.testing.assert_allclose(h.gamma, w.gamma, atol=1e-10)
        np.testing.assert_allclose(h.vcov_gamma, w.vcov, atol=1e-10 * np.abs(w.vcov).max())


def test_eligibility_coding():
    data, design = make_trial(n=40, T=8, t_star=4, eligible_rate=0.6, seed=8)
    spec = example1_spec()
    rows = replicate(data, design, spec)
    off = ~rows.eligible
    assert off.any()
    np.testing.assert_array_equal(rows.a_centered[off], 0.0)
    np.testing.assert_array_equal(rows.w_m[off], 1.0)
    base = fit_hybrid(data, design, spec)
    # any nominal p or outcome-free bookkeeping on ineligible rows is ignored
    p = data.p.copy()
    p[data.i == 0] = 0.9
    other = TrialData(data.ids, data.pid, data.t, data.z1, data.r, data.z2, data.i, data.a, p,
                      data.y, data.x, data.x_names)
    again = fit_hybrid(other, design, spec)
    np.testing.assert_array_equal(base.eta, again.eta)
    np.testing.assert_array_equal(base.gamma, again.gamma)
    # effect columns vanish on ineligible rows
    X = fit_step1(rows).X
    nb = len(spec.g)
    assert np.all(X[off][:, nb:nb + len(spec.f)] == 0)


def test_eligibility_marker_with_intercept_is_collinear():
    data, design = make_trial(n=40, T=8, t_star=4, eligible_rate=0.6, seed=8)
    with pytest.raises(RankDeficientError) as info:
        fit_hybrid(data, design, mbridge_spec(s=("i",)))
    assert any("alpha1" in t or "beta" in t for t in info.value.null_terms)


def test_all_centering_modes_fit(sim_scenario1):
    cfg, data = sim_scenario1
    fits = {c: fit_hybrid(data, cfg.design(), example1_spec(), centering=c)
            for c in ("pooled", "stage", "time")}
    for c in fits:
        assert np.all(np.isfinite(fits[c].vcov_full))
    with pytest.raises(ValidationError):
        fit_hybrid(data, cfg.design(), example1_spec(), centering="bogus")


def test_fit_result_metadata_is_json_serializable(sim_scenario1):
    cfg, data = sim_scenario1
    fit = fit_hybrid(data, cfg.design(), example1_spec(), small_sample=True)
    blob = json.dumps({"coef": fit.coef_table(), "cond": fit.condition_numbers,
                       "options": fit.options, "echo": fit.spec_echo})
    assert "beta[1]" in blob
    assert fit.options["small_sample"] is True
    assert fit.vcov_full.shape == (len(fit.names), len(fit.names))
    np.testing.assert_allclose(fit.vcov_full, fit.vcov_full.T)
    assert np.all(np.linalg.eigvalsh(fit.vcov_full) > -1e-12)


def test_small_sample_factor(sim_scenario1):
    cfg, data = sim_scenario1
    a = fit_hybrid(data, cfg.design(), example1_spec())
    b = fit_hybrid(data, cfg.design(), example1_spec(), small_sample=True)
    k = len(a.names)
    np.testing.assert_allclose(b.vcov_full, a.vcov_full * a.n / (a.n - k))


def test_no_eligible_rows():
    data, design = make_trial(n=5, T=4, t_star=2, seed=2)
    data = TrialData(data.ids, data.pid, data.t, data.z1, data.r, data.z2,
                     np.zeros_like(data.i), np.full_like(data.a, np.nan), data.p, data.y,
                     data.x, data.x_names)
    with pytest.raises(ValidationError, match="no eligible"):
        fit_hybrid(data, design, example1_spec())


def test_step2_on_raw_outcome_option(sim_scenario1):
    cfg, data = sim_scenario1
    raw = fit_hybrid(data, cfg.design(), example1_spec(), step2_response="y")
    wr = fit_wr(data, cfg.design(), example1_spec())
    np.testing.assert_allclose(raw.gamma, wr.gamma, atol=1e-12)
    with pytest.raises(ValidationError):
        fit_hybrid(data, cfg.design(), example1_spec(), step2_response="z")


def test_history_term_in_m_is_rejected(small_trial):
    data, design = small_trial
    with pytest.raises(ValidationError, match="history atom"):
        fit_hybrid(data, design, ModelSpec(f=["1"], m=["1", "x(state)"]))


def test_scenario_two_estimator_recovers_truth_on_large_sample():
    from smartmrt.inference import make_contrast
    from smartmrt.truth import true_effect_analytic

    cfg = SimConfig(scenario="II", n=3000)
    data = simulate_one(cfg, rep_rng(3, 0, "test"))
    fit = fit_hybrid(data, cfg.design(), stage_split_spec())
    for kind, regs, a in [("IA", ((-1, 1),), None), ("AD", ((1, 1), (-1, 1)), None),
                          ("ID", ((1, -1), (-1, -1)), 1)]:
        c = make_contrast(kind, regs, a, 16, fit)
        truth = true_effect_analytic(cfg, kind, 2, regs, a)
        assert abs(c.estimate - truth) < 4 * c.se
