"""Property tests for the SVD solvers against scipy references."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import linalg as sla
from scipy.optimize import minimize

from linalg import (Regime, SingularDesignError, classify_regime, fit_auto, gradient_descent_fit,
                    least_squares_fit, min_norm_fit, min_norm_fit_from_init, projection_residual)

SEEDS = st.integers(min_value=0, max_value=2 ** 32 - 1)


@pytest.mark.parametrize("params, samples, regime", [
    (10, 10, Regime.THRESHOLD),
    (11, 10, Regime.THRESHOLD),
    (9, 10, Regime.THRESHOLD),
    (12, 10, Regime.OVERPARAMETERIZED),
    (8, 10, Regime.UNDERPARAMETERIZED),
])
def test_classify_regime(params, samples, regime):
    assert classify_regime(params, samples) is regime


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 8), extra=st.integers(1, 8), seed=SEEDS)
def test_min_norm_fit_interpolates_and_lives_in_the_row_space(n, extra, seed):
    rng = np.random.default_rng(seed)
    d = n + extra
    A = rng.standard_normal((d, n))
    y = rng.standard_normal(n)
    a = min_norm_fit(A, y)

    np.testing.assert_allclose(A.T @ a, y, atol=1e-8)
    null = sla.null_space(A.T)
    np.testing.assert_allclose(null.T @ a, 0.0, atol=1e-8)
    np.testing.assert_allclose(a, sla.pinv(A.T) @ y, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(d=st.integers(1, 8), extra=st.integers(0, 8), seed=SEEDS)
def test_least_squares_matches_lstsq(d, extra, seed):
    rng = np.random.default_rng(seed)
    n = d + extra
    A = rng.standard_normal((d, n))
    y = rng.standard_normal(n)
    expected, *_ = sla.lstsq(A.T, y)
    np.testing.assert_allclose(least_squares_fit(A, y), expected, rtol=1e-6, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 6), extra=st.integers(1, 6), seed=SEEDS)
def test_fit_from_init_is_the_closest_interpolator(n, extra, seed):
    rng = np.random.default_rng(seed)
    d = n + extra
    A = rng.standard_normal((d, n))
    y = rng.standard_normal(n)
    a0 = rng.standard_normal(d)
    a = min_norm_fit_from_init(A, y, a0)

    np.testing.assert_allclose(A.T @ a, y, atol=1e-8)
    # KKT: the correction from a0 lies in the column space of A
    _, residual = projection_residual(A, a - a0)
    np.testing.assert_allclose(residual, 0.0, atol=1e-8)


def test_fit_from_init_agrees_with_constrained_minimizer():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((6, 3))
    y = rng.standard_normal(3)
    a0 = rng.standard_normal(6)
    result = minimize(lambda a: np.sum((a - a0) ** 2), a0, method="SLSQP",
                      constraints=[{"type": "eq", "fun": lambda a: A.T @ a - y}],
                      options={"ftol": 1e-12, "maxiter": 500})
    np.testing.assert_allclose(min_norm_fit_from_init(A, y, a0), result.x, atol=1e-5)


def test_fit_auto_dispatches_on_shape(rng):
    wide = rng.standard_normal((8, 3))
    tall = rng.standard_normal((3, 8))
    np.testing.assert_allclose(fit_auto(wide, np.ones(3)), min_norm_fit(wide, np.ones(3)))
    np.testing.assert_allclose(fit_auto(tall, np.ones(8)), least_squares_fit(tall, np.ones(8)))


def test_solvers_reject_the_wrong_shape(rng):
    with pytest.raises(ValueError):
        min_norm_fit(rng.standard_normal((3, 5)), np.ones(5))
    with pytest.raises(ValueError):
        least_squares_fit(rng.standard_normal((5, 3)), np.ones(3))
    with pytest.raises(ValueError):
        fit_auto(rng.standard_normal((5, 3)), np.ones(4))


def test_rank_deficient_design_raises(rng):
    column = rng.standard_normal(6)
    A = np.column_stack([column, column])
    with pytest.raises(SingularDesignError) as info:
        min_norm_fit(A, np.ones(2))
    assert "rank" in str(info.value)


def test_empty_design_raises():
    with pytest.raises(SingularDesignError) as info:
        min_norm_fit(np.zeros((4, 0)), np.zeros(0))
    assert info.value.dimension == "n"


def test_zero_parameters_fit_to_empty_vector():
    assert least_squares_fit(np.zeros((0, 5)), np.ones(5)).size == 0


@settings(max_examples=30, deadline=None)
@given(d=st.integers(2, 8), n=st.integers(1, 5), seed=SEEDS)
def test_projection_splits_orthogonally(d, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, n))
    v = rng.standard_normal(d)
    proj, residual = projection_residual(A, v)
    np.testing.assert_allclose(proj + residual, v, atol=1e-12)
    np.testing.assert_allclose(A.T @ residual, 0.0, atol=1e-8)


def test_gradient_descent_reaches_the_closest_interpolator(rng):
    A = rng.standard_normal((20, 5))
    y = rng.standard_normal(5)
    a0 = rng.standard_normal(20)
    a, iterations = gradient_descent_fit(A, y, a0)
    assert iterations < 200000
    np.testing.assert_allclose(a, min_norm_fit_from_init(A, y, a0), atol=1e-6)


def test_gradient_descent_from_zero_gives_min_norm(rng):
    A = rng.standard_normal((15, 4))
    y = rng.standard_normal(4)
    a, _ = gradient_descent_fit(A, y)
    np.testing.assert_allclose(a, min_norm_fit(A, y), atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(v=arrays(np.float64, 7, elements=st.floats(-1e3, 1e3)))
def test_projection_is_idempotent(v):
    A = np.random.default_rng(0).standard_normal((7, 3))
    proj, _ = projection_residual(A, v)
    again, residual = projection_residual(A, proj)
    np.testing.assert_allclose(again, proj, atol=1e-8)
    np.testing.assert_allclose(residual, 0.0, atol=1e-8)
