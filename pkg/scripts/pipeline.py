#!/usr/bin/env python3
"""
Transfer Lab Pipeline
End-to-end procedures for one replicate: train on the source task,
transfer the common parameters to the target by Option A (freeze) or
Option B (initialize), or pool the samples of both tasks with optional
fine-tuning of the target-specific block.
"""

from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional

import numpy as np

from linalg import fit_auto, least_squares_fit, min_norm_fit_from_init
from model import Dataset, DimensionError, ExtendedTruth, LearnerConfig, Task, sample_dataset


@dataclass(frozen=True, eq=False)
class LearnedModel:
    """Estimated common and task-specific parameters of one task."""
    w_tilde: np.ndarray
    q_tilde: np.ndarray


class SourceFit(NamedTuple):
    model: LearnedModel
    dataset: Dataset


@dataclass(frozen=True, eq=False)
class TransferOutcome:
    """Result of one transfer on a freshly drawn target dataset."""
    model: LearnedModel
    source_model: Optional[LearnedModel]
    model_error: float
    transfer_error: float
    decomposition: Dict[str, float] = field(default_factory=dict)


def _squared(v: np.ndarray) -> float:
    return float(np.dot(v, v))


def _check_dimensions(truth: ExtendedTruth, cfg: LearnerConfig):
    actual = (truth.p, truth.p1, truth.p2)
    expected = (cfg.p, cfg.p1, cfg.p2)
    if actual != expected:
        raise DimensionError(f"extended truth has dimensions {actual}, learner expects {expected}")


def model_error(model: LearnedModel, truth: ExtendedTruth) -> float:
    """Squared distance of a target model to the target truth."""
    if model.w_tilde.size != truth.p or model.q_tilde.size != truth.p2:
        raise DimensionError(
            f"model has dimensions ({model.w_tilde.size}, {model.q_tilde.size}), "
            f"target truth has ({truth.p}, {truth.p2})"
        )
    return _squared(model.w_tilde - truth.w2e) + _squared(model.q_tilde - truth.q2e)


def train_source(truth: ExtendedTruth, cfg: LearnerConfig, rng: np.random.Generator) -> SourceFit:
    """Fit the source task on the stacked design U = [X; Z]."""
    _check_dimensions(truth, cfg)
    data = sample_dataset(truth, Task.SOURCE, cfg.n1, rng)
    coefficients = fit_auto(np.vstack([data.X, data.Z]), data.y)
    model = LearnedModel(w_tilde=coefficients[:cfg.p], q_tilde=coefficients[cfg.p:])
    return SourceFit(model, data)


def decompose_source(source: SourceFit, truth: ExtendedTruth) -> Dict[str, float]:
    """Split the realized transferring error into its noiseless and noise parts.

    The estimator is linear in the outputs, so the learned common vector
    is the fit of the noiseless outputs plus the fit of the noise.
    """
    data = source.dataset
    p = truth.p
    U = np.vstack([data.X, data.Z])
    signal = U.T @ np.concatenate([truth.w1e, truth.q1e])
    from_signal = fit_auto(U, signal)[:p]
    from_noise = fit_auto(U, data.eps)[:p]
    return {
        "lco_noiseless": _squared(truth.w2e - from_signal),
        "lco_noise": _squared(from_noise),
    }


def _outcome(model: LearnedModel, source: Optional[LearnedModel], truth: ExtendedTruth,
             decomposition: Dict[str, float]) -> TransferOutcome:
    common_error = _squared(model.w_tilde - truth.w2e)
    specific_error = _squared(model.q_tilde - truth.q2e)
    transferred = source.w_tilde if source is not None else model.w_tilde
    decomposition = dict(decomposition)
    decomposition.setdefault("common_error", common_error)
    decomposition.setdefault("specific_error", specific_error)
    return TransferOutcome(
        model=model,
        source_model=source,
        model_error=common_error + specific_error,
        transfer_error=_squared(truth.w2e - transferred),
        decomposition=decomposition,
    )


def transfer_option_a(source: LearnedModel, truth: ExtendedTruth, cfg: LearnerConfig,
                      rng: np.random.Generator) -> TransferOutcome:
    """Freeze the transferred common part and fit only the target-specific part."""
    _check_dimensions(truth, cfg)
    data = sample_dataset(truth, Task.TARGET, cfg.n2, rng)
    residual = data.y - data.X.T @ source.w_tilde
    q_tilde = fit_auto(data.Z, residual)
    model = LearnedModel(w_tilde=source.w_tilde, q_tilde=q_tilde)
    return _outcome(model, source, truth, {})


def transfer_option_b(source: LearnedModel, truth: ExtendedTruth, cfg: LearnerConfig,
                      rng: np.random.Generator) -> TransferOutcome:
    """Use the transferred common part as the initial point of a joint target fit."""
    _check_dimensions(truth, cfg)
    data = sample_dataset(truth, Task.TARGET, cfg.n2, rng)
    U = np.vstack([data.X, data.Z])

    if cfg.p + cfg.p2 > cfg.n2:
        init = np.concatenate([source.w_tilde, np.zeros(cfg.p2)])
        coefficients = min_norm_fit_from_init(U, data.y, init)
    else:
        coefficients = least_squares_fit(U, data.y)

    model = LearnedModel(w_tilde=coefficients[:cfg.p], q_tilde=coefficients[cfg.p:])
    return _outcome(model, source, truth, {})


def sample_transfer(truth: ExtendedTruth, cfg: LearnerConfig, rng: np.random.Generator,
                    fine_tune: bool = False) -> TransferOutcome:
    """Pool source and target samples on the common features.

    Without fine-tuning the target-specific estimate stays zero. With
    fine-tuning it is refit on the target residuals exactly as in Option A.
    """
    _check_dimensions(truth, cfg)
    source = sample_dataset(truth, Task.SOURCE, cfg.n1, rng)
    target = sample_dataset(truth, Task.TARGET, cfg.n2, rng)

    V = np.hstack([source.X, target.X])
    y = np.concatenate([source.y, target.y])
    w_tilde = fit_auto(V, y)

    eps_tilde = np.concatenate([
        source.Z.T @ truth.q1e + source.eps,
        target.Z.T @ truth.q2e + target.eps,
    ])
    noise_part = fit_auto(V, eps_tilde)
    bias_part = truth.w2e - fit_auto(V, V.T @ truth.w2e)

    if np.any(truth.w1e != truth.w2e):
        xi = np.concatenate([source.X.T @ (truth.w1e - truth.w2e), np.zeros(cfg.n2)])
        similarity_part = fit_auto(V, xi)
    else:
        similarity_part = np.zeros(cfg.p)

    decomposition = {
        "k_noise": _squared(noise_part),
        "k_similarity": _squared(similarity_part),
        "k_cross": 2.0 * float(np.dot(noise_part, similarity_part)),
    }
    common_bias = _squared(bias_part)

    if fine_tune:
        residual = target.y - target.X.T @ w_tilde
        q_tilde = fit_auto(target.Z, residual)
        gamma = target.eps - target.X.T @ (w_tilde - truth.w2e)
        t_bias = _squared(truth.q2e - fit_auto(target.Z, target.Z.T @ truth.q2e))
        t_var = _squared(fit_auto(target.Z, gamma))
        decomposition.update(t_bias=t_bias, t_var=t_var, k_bias=common_bias + t_bias + t_var)
    else:
        q_tilde = np.zeros(cfg.p2)
        decomposition["k_bias"] = common_bias + _squared(truth.q2e)

    model = LearnedModel(w_tilde=w_tilde, q_tilde=q_tilde)
    return _outcome(model, None, truth, decomposition)
