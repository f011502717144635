"""Closed-form values checked against hand arithmetic."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linalg import Regime
from model import LearnerConfig, TruthMode, extend_truth, make_ground_truth
from theory import (RegimeMismatchError, ResultKind, ScenarioParams, TheoryError,
                    TheoryResult, TheoryUndefinedAtThreshold, Trend, allocate_budget,
                    bias_bounds_b1_b2_b3, bias_concentration_bound, bnoise, bnoise_trend, combine,
                    descent_floor_option_a, descent_floor_option_b, fine_tune_constants,
                    fine_tune_theory, option_a_error, option_a_from_lco, option_b_error,
                    option_b_from_lco, option_coefficients, sacrifice_analysis,
                    sacrifice_crossover, sample_transfer_theory, transferring_error)


def scenario(**changes):
    base = dict(w1_norm=1.0, w2_norm=1.0, q1_norm=1.0, q2_norm=1.0, delta=0.0,
                sigma1=1.0, sigma2=1.0, p=5, p1=5, p2=5, n1=100, n2=50)
    base.update(changes)
    return ScenarioParams(**base)


def test_transferring_error_underparameterized_exact():
    result = transferring_error(scenario())
    assert result.kind is ResultKind.EXACT
    assert result.regime is Regime.UNDERPARAMETERIZED
    assert result.value == pytest.approx(5 / 89)


def test_transferring_error_adds_delta_squared():
    result = transferring_error(scenario(delta=0.5))
    assert result.value == pytest.approx(0.25 + 5 / 89)


def test_transferring_error_pure_noise_is_a_degenerate_interval():
    sp = scenario(w1_norm=0.0, w2_norm=0.0, q1_norm=0.0, p=10, p1=100, n1=50)
    result = transferring_error(sp)
    assert result.kind is ResultKind.BOUNDS
    assert result.lower == pytest.approx(0.077043, abs=1e-6)
    assert result.upper == result.lower


def test_bnoise_value():
    assert bnoise(scenario(p=10, p1=100, n1=50)) == pytest.approx((10 / 110) * (50 / 59))


def test_bnoise_rejects_the_underparameterized_regime():
    with pytest.raises(RegimeMismatchError):
        bnoise(scenario())


def test_bias_bounds_at_half_overparameterization():
    bounds = bias_bounds_b1_b2_b3(scenario(p=100, p1=100, n1=100))
    assert bounds.b1 == pytest.approx(1.0)
    assert bounds.b2 == pytest.approx(1.0 + 2.0 * math.sqrt(0.5))
    assert bounds.b3 == pytest.approx(2.0 * math.sqrt(0.5))
    assert bounds.min_square == pytest.approx(1.0)


def test_threshold_is_undefined():
    with pytest.raises(TheoryUndefinedAtThreshold):
        transferring_error(scenario(p=50, p1=50, n1=100))
    with pytest.raises(TheoryUndefinedAtThreshold):
        option_a_error(scenario(p2=51), 0.0)
    with pytest.raises(TheoryUndefinedAtThreshold):
        TheoryResult.exact(1.0, Regime.THRESHOLD)


def test_option_a_underparameterized():
    assert option_a_error(scenario(), 0.0).value == pytest.approx(5 / 44)


def test_option_a_overparameterized_terms():
    sp = scenario(p2=100, sigma2=0.2, q2_norm=1.0)
    result = option_a_error(sp, 0.5)
    expected_a1 = 0.5 + 50 * (0.5 + 0.04) / 49
    assert result.terms["term_a1"] == pytest.approx(expected_a1)
    assert result.terms["term_a2"] == pytest.approx(0.5)
    assert result.value == pytest.approx(expected_a1 + 0.5)


def test_option_b_overparameterized():
    result = option_b_error(scenario(p=10, p2=100, sigma2=0.2), 0.5)
    assert result.value == pytest.approx(0.852081, abs=1e-5)


def test_option_b_underparameterized():
    assert option_b_error(scenario(), 0.0).value == pytest.approx(10 / 39)


def test_negative_lco_is_rejected():
    with pytest.raises(ValueError):
        option_a_error(scenario(), -0.1)


def test_interval_lco_propagates_endpoint_wise():
    sp = scenario(p2=100, sigma2=0.2)
    lco = TheoryResult.bounds(0.1, 0.4, Regime.OVERPARAMETERIZED)
    result = option_a_from_lco(sp, lco)
    assert result.kind is ResultKind.BOUNDS
    assert result.lower == pytest.approx(option_a_error(sp, 0.1).value)
    assert result.upper == pytest.approx(option_a_error(sp, 0.4).value)

    exact = option_b_from_lco(sp, TheoryResult.exact(0.1, Regime.OVERPARAMETERIZED))
    assert exact.value == pytest.approx(option_b_error(sp, 0.1).value)


def test_option_coefficients_reproduce_the_errors():
    sp = scenario(p=10, p2=100, sigma2=0.3, q2_norm=0.7)
    c = option_coefficients(sp)
    lco = 0.2
    a = c["a_lco"] * lco + c["a_q2"] * 0.49 + c["a_sigma2"] * 0.09
    b = c["b_lco"] * lco + c["b_q2"] * 0.49 + c["b_sigma2"] * 0.09
    assert a == pytest.approx(option_a_error(sp, lco).value)
    assert b == pytest.approx(option_b_error(sp, lco).value)


def test_descent_floors():
    assert descent_floor_option_a(scenario(sigma2=0.1, q2_norm=1.0), 0.0) == pytest.approx(51 / 0.9)
    assert descent_floor_option_a(scenario(sigma2=2.0, q2_norm=1.0), 0.0) is None

    assert descent_floor_option_b(scenario(p=10, sigma2=0.1, q2_norm=1.0), 0.0) == pytest.approx(51 / 0.9 - 10)
    assert descent_floor_option_b(scenario(p=100, sigma2=0.1, q2_norm=1.0), 0.0) is None


def test_option_a_floor_is_the_minimum_of_the_closed_form():
    sp = scenario(sigma2=0.1, q2_norm=1.0)
    floor = descent_floor_option_a(sp, 0.0)
    errors = {p2: option_a_error(sp.with_changes(p2=p2), 0.0).value for p2 in range(53, 120)}
    best = min(errors, key=errors.get)
    assert abs(best - floor) <= 1


def test_bnoise_trend_agrees_with_the_closed_form():
    assert bnoise_trend(10, 100, 50) is Trend.INCREASING
    assert bnoise_trend(80, 100, 50) is Trend.DECREASING
    low = bnoise(scenario(p=10, p1=100, n1=50))
    high = bnoise(scenario(p=11, p1=100, n1=50))
    assert high > low


def test_allocate_budget():
    advice = allocate_budget(60, 5)
    assert (advice.p, advice.p1) == (5, 55)
    with pytest.raises(ValueError):
        allocate_budget(5, 5)


def test_sacrifice_analysis():
    analysis = sacrifice_analysis(200, 100, math.sqrt(250.0), 0.1)
    assert analysis.q1 == pytest.approx(2.5253, abs=1e-4)
    assert analysis.q2 == pytest.approx(1 + 100 * 250.01 / (200 * 99))
    assert analysis.recommend
    assert not sacrifice_analysis(200, 100, 1.0).recommend
    with pytest.raises(RegimeMismatchError):
        sacrifice_analysis(50, 100, 1.0)


def test_sacrifice_crossover_separates_the_decisions():
    crossover = sacrifice_crossover(200, 100, 0.1)
    assert crossover == pytest.approx(200 * 99 / 100 + 0.01)
    assert not sacrifice_analysis(200, 100, math.sqrt(crossover * 0.9)).recommend
    assert sacrifice_analysis(200, 100, math.sqrt(crossover * 1.1)).recommend


def test_sample_transfer_theory_overparameterized():
    sp = scenario(q1_norm=0.5, q2_norm=0.5, sigma1=0.5, sigma2=0.5, p=400, n1=50, n2=50)
    theory = sample_transfer_theory(sp)
    assert theory.k_bias.value == pytest.approx(0.75 + 0.25)
    assert theory.k_noise.value == pytest.approx(50.0 / 299)
    assert theory.k_similarity.lower == theory.k_similarity.upper == 0.0
    assert theory.total().kind is ResultKind.BOUNDS


def test_sample_transfer_theory_underparameterized_similarity_bound():
    sp = scenario(delta=0.5, q2_norm=0.5, p=20, n1=50, n2=50)
    theory = sample_transfer_theory(sp)
    assert theory.k_bias.value == pytest.approx(0.25)
    assert theory.k_similarity.lower == 0.0
    assert theory.k_similarity.upper > 0.0
    assert theory.k_similarity.terms["probability"] == pytest.approx(1 - 4 / 50)


def test_fine_tune_theory():
    sp = scenario(q2_norm=0.5, p=20, p2=100, n1=50, n2=50)
    fine = fine_tune_theory(sp)
    assert fine.t_bias.value == pytest.approx(0.5 * 0.25)
    assert fine.t_var.lower == 0.0
    assert fine.t_var.upper > 0.0
    assert fine.t_bias.terms["high_probability_upper"] >= fine.t_bias.value
    assert fine_tune_constants(sp).k_tilde > 0


def test_fine_tune_variance_bound_needs_room():
    with pytest.raises(TheoryError):
        fine_tune_theory(scenario(p2=55, n2=50))


def test_bias_concentration_bound():
    assert 0 < bias_concentration_bound(400, 100) < 1.5
    with pytest.raises(RegimeMismatchError):
        bias_concentration_bound(10, 20)


def test_combine_is_exact_only_when_every_part_is():
    exact = TheoryResult.exact(1.0, Regime.OVERPARAMETERIZED)
    interval = TheoryResult.bounds(0.5, 2.0, Regime.OVERPARAMETERIZED)
    assert combine(exact, exact).value == 2.0
    mixed = combine(exact, interval)
    assert (mixed.lower, mixed.upper) == (1.5, 3.0)
    assert mixed.value is None


def test_theory_result_validates_its_interval():
    with pytest.raises(TheoryError):
        TheoryResult.bounds(2.0, 1.0, Regime.OVERPARAMETERIZED)
    with pytest.raises(TheoryError):
        TheoryResult.exact(math.inf, Regime.UNDERPARAMETERIZED)


def test_scenario_checks_the_triangle_inequality():
    with pytest.raises(ValueError):
        scenario(delta=3.0)


def test_scenario_from_extended_truth():
    gt = make_ground_truth(3, 2, 2, w1_norm=1.0, mode=TruthMode.OFFSET, delta=0.5,
                           q1_norm=0.5, q2_norm=2.0, sigma1=0.1, sigma2=0.2)
    cfg = LearnerConfig(p=5, p1=3, p2=4, n1=30, n2=20)
    sp = ScenarioParams.from_truth(extend_truth(gt, cfg), cfg)
    assert sp.delta == pytest.approx(0.5)
    assert sp.q2_norm == pytest.approx(2.0)
    assert (sp.p, sp.p2, sp.n_pooled) == (5, 4, 50)
    assert sp.r == pytest.approx(1 - 30 / 8)


@settings(max_examples=100, deadline=None)
@given(low=st.floats(0.0, 5.0), width=st.floats(0.0, 5.0), p2=st.integers(53, 400), sigma2=st.floats(0.0, 3.0))
def test_option_errors_grow_with_the_transferring_error(low, width, p2, sigma2):
    sp = scenario(p=10, p2=p2, sigma2=sigma2)
    for evaluate in (option_a_error, option_b_error):
        assert evaluate(sp, low).value <= evaluate(sp, low + width).value + 1e-12
    interval = option_a_from_lco(sp, TheoryResult.bounds(low, low + width, Regime.OVERPARAMETERIZED))
    assert interval.lower <= interval.upper
