import numpy as np
import pytest

from smartmrt.sim import SimConfig
from smartmrt.truth import (eval_time, ipw_vs_iterated, marginal_mean, responder_probability,
                            true_effect_analytic, true_effect_mc, true_effects_mc, truth_table)
from smartmrt.errors import ValidationError

S1, S2 = SimConfig(scenario="I"), SimConfig(scenario="II")


@pytest.mark.parametrize("kind,stage,regs,a,value", [
    ("IA", 1, ((1, 1),), None, 0.1),
    ("IA", 1, ((-1, 1),), None, 0.7),
    ("IA", 2, ((1, 1),), None, 0.14),
    ("IA", 2, ((1, -1),), None, 0.06),
    ("IA", 2, ((-1, 1),), None, 0.86),
    ("IA", 2, ((-1, -1),), None, 0.54),
    ("AA", 1, (), None, 0.4),
    ("AA", 2, (), None, 0.4),
    ("AD", 1, ((1, 1), (-1, 1)), None, 0.4),
    ("AD", 2, ((1, 1), (1, -1)), None, -0.16),
    ("AD", 2, ((1, 1), (-1, 1)), None, 0.32),
    ("AD", 2, ((1, -1), (-1, 1)), None, 0.48),
    ("AD", 2, ((-1, 1), (-1, -1)), None, 0.0),
    ("ID", 1, ((1, 1), (-1, 1)), 0, 0.7),
    ("ID", 1, ((1, 1), (-1, 1)), 1, 0.1),
])
def test_scenario_one_truth_matches_published_values(kind, stage, regs, a, value):
    assert true_effect_analytic(S1, kind, stage, regs, a) == pytest.approx(value, abs=0.006)


PAIRS = [((1, 1), (-1, 1)), ((1, 1), (1, -1)), ((1, 1), (-1, 1)), ((1, 1), (-1, -1)),
         ((1, -1), (-1, 1)), ((1, -1), (-1, -1)), ((-1, 1), (-1, -1))]
# published "True" columns of the scenario-II tables (two decimals)
S2_IA = [0.1, 0.7, 0.15, 0.05, 0.89, 0.51]
S2_AD = [0.4, -0.2, 0.3, 0.3, 0.5, 0.5, 0]
S2_ID = [[0.62, -0.24, 0.46, 0.48, 0.7, 0.73, 0.03], [0.02, -0.14, -0.28, 0.12, -0.14, 0.27, 0.4]]


S1_ID = [[0.7, -0.2, 0.68, 0.52, 0.88, 0.72, -0.16], [0.1, -0.12, -0.04, 0.12, 0.08, 0.24, 0.16]]


def test_scenario_one_fixed_treatment_truth():
    for a in (0, 1):
        for k, (pair, value) in enumerate(zip(PAIRS, S1_ID[a])):
            stage = 1 if k == 0 else 2
            assert true_effect_analytic(S1, "ID", stage, pair, a) == pytest.approx(value, abs=0.006)


def test_scenario_two_truth_matches_published_values():
    regs = [((1, 1),), ((-1, 1),), ((1, 1),), ((1, -1),), ((-1, 1),), ((-1, -1),)]
    for k, value in enumerate(S2_IA):
        stage = 1 if k < 2 else 2
        assert true_effect_analytic(S2, "IA", stage, regs[k]) == pytest.approx(value, abs=0.01)
    for k, (pair, value) in enumerate(zip(PAIRS, S2_AD)):
        stage = 1 if k == 0 else 2
        assert true_effect_analytic(S2, "AD", stage, pair) == pytest.approx(value, abs=0.01)
    for a in (0, 1):
        for k, (pair, value) in enumerate(zip(PAIRS, S2_ID[a])):
            stage = 1 if k == 0 else 2
            assert true_effect_analytic(S2, "ID", stage, pair, a) == pytest.approx(value, abs=0.01)


def test_scenario_one_responder_rates():
    assert responder_probability(S1, 1) == 0.6
    assert responder_probability(S1, -1) == 0.45


def test_marginal_mean_averages_over_treatment():
    # in stage 1 the treatment is randomized with a single probability p
    for d1, p in ((1, 0.6), (-1, 0.4)):
        d = (d1, 1)
        m1, m0 = marginal_mean(S2, d, 1, 1), marginal_mean(S2, d, 1, 0)
        assert p * m1 + (1 - p) * m0 == pytest.approx(marginal_mean(S2, d, 1))


def test_eval_time():
    assert eval_time(S1, 1) == 12 and eval_time(S1, 2) == 16
    with pytest.raises(ValidationError):
        eval_time(S1, 3)


def test_mc_agrees_with_analytic_small():
    v, se = true_effect_mc(S1, "IA", 2, ((-1, 1),), n_mc=40_000, chunk=20_000)
    assert abs(v - true_effect_analytic(S1, "IA", 2, ((-1, 1),))) < 4 * se


def test_batch_mc_shares_arms():
    items = [("IA", 2, ((1, 1),), None), ("AD", 2, ((1, 1), (1, -1)), None)]
    batch = true_effects_mc(S1, items, n_mc=10_000, chunk=5_000)
    single = true_effect_mc(S1, "IA", 2, ((1, 1),), n_mc=10_000, chunk=5_000)
    assert batch[0] == single


def test_ipw_vs_iterated_small():
    res = ipw_vs_iterated(S1, (1, -1), 2, 1, n=5000, batches=6)
    assert abs(res["diff"]) < 4 * max(res["diff_se"], 1e-12) + 1e-12


def test_truth_table_lookup_and_frame():
    from smartmrt.harness import table_contrasts

    table = truth_table(S1, table_contrasts()[:3])
    assert table.lookup(1, "IA", ((1, 1),)) == pytest.approx(0.1)
    frame = table.to_frame()
    assert len(frame) == 3 and set(frame.provenance) == {"analytic"}
    with pytest.raises(KeyError):
        table.lookup(2, "AA", ())


def test_input_checks():
    with pytest.raises(ValidationError):
        true_effect_analytic(S1, "ZZ", 1)
    with pytest.raises(ValidationError):
        true_effect_analytic(S1, "ID", 1, ((1, 1), (-1, 1)), None)
    with pytest.raises(ValidationError):
        true_effect_analytic(S1, "AD", 1, ((1, 1),))
