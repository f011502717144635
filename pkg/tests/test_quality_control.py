"""Tests for the verification checks and harness."""

import json

import numpy as np
import pytest

from config_loader import DEFAULT_LAB_CONFIG, PRESET_DIR, load_json_file
from linalg import Regime
from quality_control import (QualityCheck, QualityControl, _lemma_chi_square, _lemma_min_singular_bound,
                             _lemma_singular_values, bounds_check, check_exact, count_descents,
                             exact_check, fitted_floor, generate_verification_report,
                             save_verification_report, verify_lemma_suite)
from sweep_processor import SweepRecord
from theory import TheoryResult


def _record(mean, se, theory):
    return SweepRecord(variable="p2", value=5.0, regime=Regime.UNDERPARAMETERIZED, empirical_mean=mean,
                       empirical_se=se, transfer_mean=0.0, transfer_se=0.0, term_means={}, term_ses={},
                       theory=theory, replicates=100)


@pytest.fixture
def harness(tmp_path):
    return QualityControl(DEFAULT_LAB_CONFIG, seed=2024, threads=2, quick=True)


def test_exact_check_passes_at_the_theory_value():
    check = exact_check("on_target", 0.5, 0.01, 0.5)
    assert check.passed
    assert check.score == 0.0


def test_exact_check_fails_ten_standard_errors_away():
    check = exact_check("off_target", 0.6, 0.01, 0.5)
    assert not check.passed
    assert check.score == pytest.approx(10.0)


def test_exact_check_with_zero_spread():
    assert exact_check("zero", 0.0, 0.0, 0.0).passed
    assert not exact_check("zero_off", 1e-3, 0.0, 0.0).passed


def test_check_exact_accepts_degenerate_bounds():
    theory = TheoryResult.bounds(0.077, 0.077, Regime.OVERPARAMETERIZED)
    assert check_exact(_record(0.0771, 0.001, theory)).passed
    with pytest.raises(ValueError):
        check_exact(_record(0.1, 0.01, TheoryResult.bounds(0.0, 1.0, Regime.OVERPARAMETERIZED)))


def test_bounds_check_uses_slack():
    assert bounds_check("inside", 0.5, 0.01, 0.0, 1.0).passed
    assert bounds_check("just_above", 1.02, 0.01, 0.0, 1.0).passed
    failed = bounds_check("far_above", 1.1, 0.01, 0.0, 1.0)
    assert not failed.passed
    assert failed.score == pytest.approx(10.0)


@pytest.mark.parametrize("means, expected", [
    ([5.0, 1.0, 5.0, 1.0, 5.0], 2),
    ([5.0, 4.0, 3.0, 2.0], 1),
    ([1.0, 2.0, 3.0], 0),
    ([5.0, 4.99, 5.0, 4.99], 0),
])
def test_count_descents(means, expected):
    assert count_descents(means, [0.1] * len(means)) == expected


def test_fitted_floor_recovers_the_minimum():
    grid = list(range(52, 121))
    means = [0.5 / (g - 51) + 1.0 - 50.0 / g for g in grid]
    floor = fitted_floor(grid, means, [0.01] * len(grid), lambda g: (1.0 / (g - 51), 1.0 - 50.0 / g, 1.0))
    assert abs(floor - 51 / 0.9) <= 1


def test_robust_lemmas():
    rng = np.random.default_rng(9)
    assert _lemma_chi_square(rng, 2000).passed
    assert _lemma_singular_values(rng, 500, 250).passed
    assert _lemma_min_singular_bound(rng, 500, 250).passed


@pytest.mark.slow
def test_full_lemma_suite():
    checks = verify_lemma_suite(np.random.default_rng(20240611))
    assert len(checks) == 8
    failed = [c.check_name for c in checks if not c.passed]
    assert not failed


def test_suite_seeds_are_stable_and_distinct(harness):
    assert harness._suite_seed("bnoise") == harness._suite_seed("bnoise")
    assert harness._suite_seed("bnoise") != harness._suite_seed("options")


def test_quick_mode_scales_replicates(harness):
    assert harness._replicates("acceptance_replicates") == 1000
    assert harness._replicates("lemma_draws") == 1000


def test_run_all_reports_a_broken_suite(harness, monkeypatch, capsys):
    def boom():
        raise RuntimeError("exploded")

    monkeypatch.setattr(harness, "check_bnoise_exactness", boom)
    checks = harness.run_all(["bnoise"])
    assert len(checks) == 1 and not checks[0].passed
    assert "✗ bnoise_suite" in capsys.readouterr().out


def test_run_all_rejects_unknown_suites(harness):
    with pytest.raises(ValueError):
        harness.run_all(["astrology"])


def test_unknown_insight_expectation(harness):
    with pytest.raises(ValueError):
        harness._expectation_check("x", "sideways", [])


def test_report_files(harness, tmp_path):
    checks = [
        QualityCheck("good", True, 0.1, "fine", {"z": 0.1}, "exactness"),
        QualityCheck("bad", False, float("inf"), "broken", {"z": float("inf")}, "floor"),
    ]
    evaluation = harness.evaluate_checks(checks)
    assert evaluation["passed_checks"] == 1
    assert evaluation["recommendations"]

    text = generate_verification_report(evaluation)
    assert "PASS  good" in text and "FAIL  bad" in text

    text_path, json_path = save_verification_report(evaluation, tmp_path)
    assert text_path.exists()
    data = json.loads(json_path.read_text(encoding="utf-8"))
    assert data["detailed_checks"][1]["score"] == "inf"
    assert data["checks_by_category"] == {"exactness": ["good"], "floor": ["bad"]}


@pytest.mark.slow
def test_transferring_error_is_exact(harness):
    checks = harness.check_transferring_error_exactness(replicates=10000)
    assert all(check.passed for check in checks), [c.message for c in checks]


@pytest.mark.slow
def test_bnoise_is_exact(harness):
    checks = harness.check_bnoise_exactness(replicates=10000)
    assert all(check.passed for check in checks), [c.message for c in checks]


@pytest.mark.slow
def test_option_errors_are_exact(harness):
    checks = harness.check_option_exactness(replicates=10000)
    assert all(check.passed for check in checks), [c.message for c in checks]


@pytest.mark.slow
def test_noiseless_error_respects_the_bias_bounds(harness):
    checks = harness.check_tightness_bounds(replicates=200)
    assert all(check.passed for check in checks), [c.message for c in checks]


def _failures(checks):
    return [f"{c.check_name}: {c.message}" for c in checks if not c.passed]


@pytest.mark.slow
def test_sample_transfer_terms_match_theory(harness):
    checks = harness.check_sample_transfer(replicates=4000)
    names = {c.check_name for c in checks}
    assert {"k_bias_overparameterized", "k_noise_underparameterized", "t_bias_overparameterized",
            "t_var_high_probability_bound"} <= names
    assert not _failures(checks)


@pytest.mark.slow
def test_descent_floors_match_prediction(harness):
    checks = harness.check_descent_floors(replicates=2000)
    assert [c.check_name for c in checks] == ["descent_floor_option_a", "descent_floor_option_b"]
    assert not _failures(checks)


@pytest.mark.slow
def test_transferring_error_grows_with_common_share_of_budget(harness):
    checks = harness.check_budget_monotonicity(replicates=200)
    assert len(checks) == 2
    assert not _failures(checks)


@pytest.mark.slow
def test_options_converge_for_large_p2(harness):
    config_set = load_json_file(PRESET_DIR / "insights.json")
    config_set["insights"] = [i for i in config_set["insights"] if i["name"] == "options_converge_large_p2"]
    checks = harness.insight_checks(config_set)
    assert [c.check_name for c in checks] == ["options_converge_large_p2_converge"]
    assert not _failures(checks)


@pytest.mark.slow
def test_every_insight_holds(harness):
    checks = harness.insight_checks()
    assert len(checks) >= 10
    assert not _failures(checks)


@pytest.mark.slow
def test_z_scores_are_calibrated(harness):
    checks = harness.check_z_calibration(replicates=500)
    assert not _failures(checks)
