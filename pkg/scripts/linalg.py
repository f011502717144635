#!/usr/bin/env python3
"""
Transfer Lab Linear Algebra
Dense SVD-based solvers used by every estimator: minimum-norm
interpolation (optionally from an initial point), least squares, and
orthogonal projection onto a design's column space.

Designs are stored feature-major: A is d x n with one column per sample,
so the fitted vector a satisfies A^T a = y.
"""

from enum import Enum
from typing import Optional, Tuple

import numpy as np

# singular values below RCOND * largest count as zero
RCOND = 1e-10


class Regime(Enum):
    """Parameter count relative to sample count."""
    OVERPARAMETERIZED = "Overparameterized"
    UNDERPARAMETERIZED = "Underparameterized"
    THRESHOLD = "Threshold"


class SingularDesignError(ValueError):
    """Design is rank deficient beyond the SVD cutoff."""

    def __init__(self, message: str, dimension: str):
        super().__init__(message)
        self.dimension = dimension


def classify_regime(params: int, samples: int) -> Regime:
    """Threshold when the counts differ by at most one."""
    if abs(params - samples) <= 1:
        return Regime.THRESHOLD
    if params > samples:
        return Regime.OVERPARAMETERIZED
    return Regime.UNDERPARAMETERIZED


def _as_design(A, y) -> Tuple[np.ndarray, np.ndarray]:
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if A.ndim != 2:
        raise ValueError(f"design must be a matrix, got shape {A.shape}")
    if A.shape[1] != y.size:
        raise ValueError(f"design has {A.shape[1]} samples but {y.size} outputs were given")
    return A, y


def _thin_svd(A: np.ndarray, limiting: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    d, n = A.shape
    if n == 0:
        raise SingularDesignError("design has no samples (n=0)", "n")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[0] == 0.0 or s[-1] <= RCOND * s[0]:
        rank = int(np.sum(s > RCOND * s[0])) if s[0] > 0 else 0
        raise SingularDesignError(
            f"design {d}x{n} has numerical rank {rank}, expected full rank {min(d, n)} in {limiting}",
            limiting,
        )
    return U, s, Vt


def _solve_transpose(A: np.ndarray, y: np.ndarray, limiting: str) -> np.ndarray:
    """Apply the pseudo-inverse of A^T to y: U diag(1/s) V^T y."""
    if A.shape[0] == 0:
        if A.shape[1] == 0:
            raise SingularDesignError("design has no samples (n=0)", "n")
        return np.zeros(0)
    U, s, Vt = _thin_svd(A, limiting)
    return U @ ((Vt @ y) / s)


def min_norm_fit(A, y) -> np.ndarray:
    """Minimum l2-norm solution of A^T a = y, i.e. A (A^T A)^{-1} y."""
    A, y = _as_design(A, y)
    d, n = A.shape
    if d <= n:
        raise ValueError(f"min_norm_fit needs more parameters than samples, got d={d}, n={n}")
    return _solve_transpose(A, y, "n (column rank)")


def min_norm_fit_from_init(A, y, a0) -> np.ndarray:
    """Interpolator closest to a0: a0 + A (A^T A)^{-1} (y - A^T a0)."""
    A, y = _as_design(A, y)
    a0 = np.asarray(a0, dtype=float).reshape(-1)
    if a0.size != A.shape[0]:
        raise ValueError(f"initial point has length {a0.size}, design has {A.shape[0]} rows")
    return a0 + min_norm_fit(A, y - A.T @ a0)


def least_squares_fit(A, y) -> np.ndarray:
    """Unique least-squares minimizer (A A^T)^{-1} A y."""
    A, y = _as_design(A, y)
    d, n = A.shape
    if d > n:
        raise ValueError(f"least_squares_fit needs at least as many samples as parameters, got d={d}, n={n}")
    return _solve_transpose(A, y, "d (row rank)")


def fit_auto(A, y) -> np.ndarray:
    """Min-norm interpolation when d > n, least squares otherwise."""
    A, y = _as_design(A, y)
    if A.shape[0] > A.shape[1]:
        return min_norm_fit(A, y)
    return least_squares_fit(A, y)


def projection_residual(A, v) -> Tuple[np.ndarray, np.ndarray]:
    """Split v into its projection onto the column space of A and the remainder."""
    A = np.asarray(A, dtype=float)
    v = np.asarray(v, dtype=float).reshape(-1)
    if A.shape[0] != v.size:
        raise ValueError(f"vector has length {v.size}, design has {A.shape[0]} rows")
    if A.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    U, _, _ = _thin_svd(A, "n (column rank)")
    proj = U @ (U.T @ v)
    return proj, v - proj


def gradient_descent_fit(A, y, a0=None, step: Optional[float] = None,
                         tol: float = 1e-10, max_iter: int = 200000) -> Tuple[np.ndarray, int]:
    """Plain gradient descent on 0.5 * ||A^T a - y||^2 starting from a0.

    Returns the final iterate and the number of iterations taken. Stops
    when the gradient norm falls below tol.
    """
    A, y = _as_design(A, y)
    a = np.zeros(A.shape[0]) if a0 is None else np.array(a0, dtype=float).reshape(-1)
    if step is None:
        top = np.linalg.norm(A, 2)
        step = 1.0 / (top * top)

    for iteration in range(1, max_iter + 1):
        grad = A @ (A.T @ a - y)
        if np.linalg.norm(grad) <= tol:
            return a, iteration
        a = a - step * grad
    return a, max_iter
