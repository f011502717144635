#!/usr/bin/env python3
"""
Transfer Lab Theory
Closed-form expectations and bounds for the transferring error, the
Option A and Option B model errors, sample transfer with fine-tuning,
and the design rules that follow from them (descent floors, budget
allocation between common and task-specific features, feature sacrifice).

Every evaluator declines inside the interpolation threshold band, where
the closed forms have vanishing denominators.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, NamedTuple, Optional

import numpy as np

from linalg import Regime, classify_regime
from model import ExtendedTruth, LearnerConfig


class TheoryError(ValueError):
    """A closed form was evaluated outside its domain."""


class TheoryUndefinedAtThreshold(TheoryError):
    """Parameter and sample counts differ by at most one."""


class RegimeMismatchError(TheoryError):
    """The evaluator only covers the other regime."""


class ResultKind(Enum):
    EXACT = "Exact"
    BOUNDS = "Bounds"


class Trend(Enum):
    INCREASING = "Increasing"
    DECREASING = "Decreasing"
    STATIONARY = "Stationary"


@dataclass(frozen=True)
class TheoryResult:
    """An exact expectation or a [lower, upper] interval, tagged with its regime."""
    kind: ResultKind
    lower: float
    upper: float
    regime: Regime
    terms: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.regime is Regime.THRESHOLD:
            raise TheoryUndefinedAtThreshold("no closed form inside the threshold band")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise TheoryError(f"non-finite theory value: [{self.lower}, {self.upper}]")
        if self.lower > self.upper:
            raise TheoryError(f"inverted interval: [{self.lower}, {self.upper}]")

    @classmethod
    def exact(cls, value: float, regime: Regime, **terms: float) -> "TheoryResult":
        return cls(ResultKind.EXACT, float(value), float(value), regime, dict(terms))

    @classmethod
    def bounds(cls, lower: float, upper: float, regime: Regime, **terms: float) -> "TheoryResult":
        return cls(ResultKind.BOUNDS, float(lower), float(upper), regime, dict(terms))

    @property
    def is_exact(self) -> bool:
        return self.kind is ResultKind.EXACT

    @property
    def value(self) -> Optional[float]:
        return self.lower if self.is_exact else None

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


@dataclass(frozen=True)
class ScenarioParams:
    """Norms, noise levels and dimensions that the closed forms depend on."""
    w1_norm: float
    w2_norm: float
    q1_norm: float
    q2_norm: float
    delta: float
    sigma1: float
    sigma2: float
    p: int
    p1: int
    p2: int
    n1: int
    n2: int

    def __post_init__(self):
        if self.delta > self.w1_norm + self.w2_norm + 1e-12:
            raise ValueError(
                f"delta={self.delta} violates the triangle inequality with "
                f"norms {self.w1_norm} and {self.w2_norm}"
            )

    @classmethod
    def from_truth(cls, truth: ExtendedTruth, cfg: LearnerConfig) -> "ScenarioParams":
        return cls(
            w1_norm=float(np.linalg.norm(truth.w1e)),
            w2_norm=float(np.linalg.norm(truth.w2e)),
            q1_norm=float(np.linalg.norm(truth.q1e)),
            q2_norm=float(np.linalg.norm(truth.q2e)),
            delta=truth.delta,
            sigma1=truth.effective_sigma1,
            sigma2=truth.effective_sigma2,
            p=cfg.p, p1=cfg.p1, p2=cfg.p2, n1=cfg.n1, n2=cfg.n2,
        )

    def with_changes(self, **changes) -> "ScenarioParams":
        return replace(self, **changes)

    @property
    def r(self) -> float:
        """Overparameterization ratio of the source step."""
        return 1.0 - self.n1 / (self.p + self.p1)

    @property
    def n_pooled(self) -> int:
        return self.n1 + self.n2


class BiasBounds(NamedTuple):
    b1: float
    b2: float
    b3: float

    @property
    def min_square(self) -> float:
        return min(self.b1, self.b2, self.b3) ** 2


class BudgetAdvice(NamedTuple):
    p: int
    p1: int
    claim: str


class SacrificeAnalysis(NamedTuple):
    q1: float
    q2: float
    recommend: bool


class SampleTransferTheory(NamedTuple):
    k_bias: TheoryResult
    k_noise: TheoryResult
    k_similarity: TheoryResult

    def total(self) -> TheoryResult:
        return combine(self.k_bias, self.k_noise, self.k_similarity)


class FineTuneConstants(NamedTuple):
    k_tilde: float
    c_const: float


class FineTuneTheory(NamedTuple):
    t_bias: TheoryResult
    t_var: TheoryResult


def step1_regime(sp: ScenarioParams) -> Regime:
    return classify_regime(sp.p + sp.p1, sp.n1)


def option_a_regime(sp: ScenarioParams) -> Regime:
    return classify_regime(sp.p2, sp.n2)


def option_b_regime(sp: ScenarioParams) -> Regime:
    return classify_regime(sp.p + sp.p2, sp.n2)


def pooled_regime(sp: ScenarioParams) -> Regime:
    return classify_regime(sp.p, sp.n_pooled)


def fine_tune_regime(sp: ScenarioParams) -> Regime:
    return classify_regime(sp.p2, sp.n2)


def _require_defined(regime: Regime, what: str, params: int, samples: int) -> Regime:
    if regime is Regime.THRESHOLD:
        raise TheoryUndefinedAtThreshold(f"{what}: {params} parameters against {samples} samples")
    return regime


def _require_overparameterized(sp: ScenarioParams, what: str):
    regime = _require_defined(step1_regime(sp), what, sp.p + sp.p1, sp.n1)
    if regime is not Regime.OVERPARAMETERIZED:
        raise RegimeMismatchError(f"{what} needs p+p1 > n1+1, got p+p1={sp.p + sp.p1}, n1={sp.n1}")


def combine(*results: TheoryResult) -> TheoryResult:
    """Sum of several results; exact only if every part is exact."""
    lower = math.fsum(r.lower for r in results)
    upper = math.fsum(r.upper for r in results)
    regime = results[0].regime
    if all(r.is_exact for r in results):
        return TheoryResult.exact(lower, regime)
    return TheoryResult.bounds(lower, upper, regime)


def bnoise(sp: ScenarioParams) -> float:
    """Noise contribution to the transferring error in the overparameterized source step."""
    _require_overparameterized(sp, "b_noise")
    total = sp.p + sp.p1
    return (sp.p / total) * sp.n1 * sp.sigma1 ** 2 / (total - sp.n1 - 1)


def bias_bounds_b1_b2_b3(sp: ScenarioParams) -> BiasBounds:
    """Three upper bounds on the square root of the noiseless transferring error."""
    _require_overparameterized(sp, "bias bounds")
    r = sp.r
    source_energy = sp.w1_norm ** 2 + sp.q1_norm ** 2
    balanced = math.sqrt(min(r, 1.0 - r))
    return BiasBounds(
        b1=sp.delta + math.sqrt(r * source_energy),
        b2=sp.w2_norm + math.sqrt(1.0 - r) * sp.w1_norm + balanced * sp.q1_norm,
        b3=math.sqrt(r) * sp.w1_norm + sp.delta + balanced * sp.q1_norm,
    )


def transferring_error(sp: ScenarioParams) -> TheoryResult:
    """Expected squared distance between the target's common parameters and the source estimate."""
    total = sp.p + sp.p1
    regime = _require_defined(step1_regime(sp), "transferring error", total, sp.n1)

    if regime is Regime.UNDERPARAMETERIZED:
        term_o1 = sp.p * sp.sigma1 ** 2 / (sp.n1 - total - 1)
        return TheoryResult.exact(sp.delta ** 2 + term_o1, regime,
                                  delta_sq=sp.delta ** 2, term_o1=term_o1)

    noise = bnoise(sp)
    bounds = bias_bounds_b1_b2_b3(sp)
    return TheoryResult.bounds(
        noise, bounds.min_square + noise, regime,
        b_noise=noise,
        noiseless_upper=bounds.min_square,
        b1_sq=bounds.b1 ** 2,
        b2_sq=bounds.b2 ** 2,
        b3_sq=bounds.b3 ** 2,
    )


def _check_lco(lco: float):
    if lco < 0 or not math.isfinite(lco):
        raise ValueError(f"transferring error must be finite and non-negative, got {lco}")


def option_a_error(sp: ScenarioParams, lco: float) -> TheoryResult:
    """Expected model error when the transferred common part is frozen."""
    _check_lco(lco)
    regime = _require_defined(option_a_regime(sp), "Option A", sp.p2, sp.n2)
    load = lco + sp.sigma2 ** 2

    if regime is Regime.OVERPARAMETERIZED:
        term_a1 = lco + sp.n2 * load / (sp.p2 - sp.n2 - 1)
        term_a2 = (1.0 - sp.n2 / sp.p2) * sp.q2_norm ** 2
        return TheoryResult.exact(term_a1 + term_a2, regime, term_a1=term_a1, term_a2=term_a2)

    target_noise = sp.p2 * load / (sp.n2 - sp.p2 - 1)
    return TheoryResult.exact(lco + target_noise, regime, lco=lco, target_noise=target_noise)


def option_b_error(sp: ScenarioParams, lco: float) -> TheoryResult:
    """Expected model error when the transferred common part only initializes training."""
    _check_lco(lco)
    total = sp.p + sp.p2
    regime = _require_defined(option_b_regime(sp), "Option B", total, sp.n2)

    if regime is Regime.OVERPARAMETERIZED:
        term_b1 = (1.0 - sp.n2 / total) * (lco + sp.q2_norm ** 2)
        term_b2 = sp.n2 * sp.sigma2 ** 2 / (total - sp.n2 - 1)
        return TheoryResult.exact(term_b1 + term_b2, regime, term_b1=term_b1, term_b2=term_b2)

    value = total * sp.sigma2 ** 2 / (sp.n2 - total - 1)
    return TheoryResult.exact(value, regime, target_noise=value)


def _propagate(evaluate: Callable[[ScenarioParams, float], TheoryResult],
               sp: ScenarioParams, lco: TheoryResult) -> TheoryResult:
    """Push an interval-valued transferring error through a formula increasing in it."""
    if lco.is_exact:
        return evaluate(sp, lco.value)
    low = evaluate(sp, lco.lower)
    high = evaluate(sp, lco.upper)
    if low.lower == high.lower:
        return low
    terms = {f"{name}_lower": v for name, v in low.terms.items()}
    terms.update({f"{name}_upper": v for name, v in high.terms.items()})
    return TheoryResult.bounds(low.lower, high.lower, low.regime, **terms)


def option_a_from_lco(sp: ScenarioParams, lco: TheoryResult) -> TheoryResult:
    return _propagate(option_a_error, sp, lco)


def option_b_from_lco(sp: ScenarioParams, lco: TheoryResult) -> TheoryResult:
    return _propagate(option_b_error, sp, lco)


def option_coefficients(sp: ScenarioParams) -> Dict[str, float]:
    """Coefficients of L_co, ||q2||^2 and sigma2^2 in both overparameterized option errors."""
    if option_a_regime(sp) is not Regime.OVERPARAMETERIZED:
        raise RegimeMismatchError(f"coefficients need p2 > n2+1, got p2={sp.p2}, n2={sp.n2}")
    total = sp.p + sp.p2
    return {
        "a_lco": 1.0 + sp.n2 / (sp.p2 - sp.n2 - 1),
        "a_q2": 1.0 - sp.n2 / sp.p2,
        "a_sigma2": sp.n2 / (sp.p2 - sp.n2 - 1),
        "b_lco": 1.0 - sp.n2 / total,
        "b_q2": 1.0 - sp.n2 / total,
        "b_sigma2": sp.n2 / (total - sp.n2 - 1),
    }


def descent_floor_option_a(sp: ScenarioParams, lco: float) -> Optional[float]:
    """p2 minimizing the overparameterized Option A error, or None when it is monotone."""
    _check_lco(lco)
    load = lco + sp.sigma2 ** 2
    if load >= sp.q2_norm ** 2:
        return None
    return (sp.n2 + 1) / (1.0 - math.sqrt(load) / sp.q2_norm)


def descent_floor_option_b(sp: ScenarioParams, lco: float) -> Optional[float]:
    """p2 minimizing the overparameterized Option B error at fixed p, or None."""
    _check_lco(lco)
    base = lco + sp.q2_norm ** 2
    if sp.sigma2 ** 2 >= base:
        return None
    t = (sp.n2 + 1) / (1.0 - sp.sigma2 / math.sqrt(base))
    if sp.p >= t:
        return None
    return t - sp.p


def bnoise_trend(p: int, p1: int, n1: int) -> Trend:
    """Direction in which b_noise moves as p grows."""
    lhs = p * p
    rhs = p1 * (p1 - n1 - 1)
    if lhs > rhs:
        return Trend.DECREASING
    if lhs < rhs:
        return Trend.INCREASING
    return Trend.STATIONARY


def allocate_budget(C: int, s: int, sp: Optional[ScenarioParams] = None) -> BudgetAdvice:
    """Split a fixed source feature budget between common and source-specific parts."""
    if s < 0:
        raise ValueError(f"s must be non-negative, got {s}")
    if C <= s:
        raise ValueError(f"budget C={C} must exceed the number of true common features s={s}")
    claim = "transferring error is non-decreasing in p at fixed p+p1"
    if sp is not None and sp.p + sp.p1 != C:
        claim += f" (scenario uses p+p1={sp.p + sp.p1}, advice is for C={C})"
    return BudgetAdvice(p=s, p1=C - s, claim=claim)


def sacrifice_analysis(C: int, n1: int, sigma1: float, sacrifice_value: float = 0.1) -> SacrificeAnalysis:
    """Compare keeping both of two true common features against sacrificing one.

    Q1 lower-bounds the transferring error when both are kept; Q2
    upper-bounds it when one feature of the given value is absorbed
    into the source noise.
    """
    regime = _require_defined(classify_regime(C, n1), "sacrifice analysis", C, n1)
    if regime is not Regime.OVERPARAMETERIZED:
        raise RegimeMismatchError(f"sacrifice analysis needs C > n1+1, got C={C}, n1={n1}")
    spare = C - n1 - 1
    q1 = (2.0 / C) * n1 * sigma1 ** 2 / spare
    q2 = 1.0 + (1.0 / C) * n1 * (sigma1 ** 2 + sacrifice_value ** 2) / spare
    return SacrificeAnalysis(q1=q1, q2=q2, recommend=q1 > q2)


def sacrifice_crossover(C: int, n1: int, sacrifice_value: float = 0.1) -> float:
    """sigma1^2 above which sacrificing a feature is recommended."""
    if C <= n1 + 1:
        raise RegimeMismatchError(f"crossover needs C > n1+1, got C={C}, n1={n1}")
    return C * (C - n1 - 1) / n1 + sacrifice_value ** 2


def _log_spread(n: int) -> float:
    return n + 2.0 * math.sqrt(n * math.log(n)) + 2.0 * math.log(n)


def _similarity_bounds(sp: ScenarioParams, regime: Regime) -> TheoryResult:
    probability = 1.0 - 4.0 / sp.n1
    if sp.delta == 0:
        return TheoryResult.bounds(0.0, 0.0, regime, probability=probability)

    n1, pooled = sp.n1, sp.n_pooled
    delta_sq = sp.delta ** 2
    if regime is Regime.OVERPARAMETERIZED:
        base = math.sqrt(sp.p) - math.sqrt(pooled) - math.sqrt(2.0 * math.log(n1))
        if base <= 0:
            raise TheoryError(f"similarity interval undefined: sqrt(p) too small for p={sp.p}, n={pooled}")
        low_scale = max(0.0, n1 - 2.0 * math.sqrt(n1 * math.log(n1)))
        low = low_scale * delta_sq / (math.sqrt(sp.p) + math.sqrt(pooled) + math.sqrt(2.0 * math.log(n1))) ** 2
        high = _log_spread(n1) * delta_sq / base ** 2
        return TheoryResult.bounds(low, high, regime, probability=probability)

    base = math.sqrt(pooled) - math.sqrt(sp.p) - math.sqrt(2.0 * math.log(pooled))
    if base <= 0:
        raise TheoryError(f"similarity bound undefined: sqrt(n) too small for p={sp.p}, n={pooled}")
    return TheoryResult.bounds(0.0, _log_spread(n1) * delta_sq / base ** 2, regime, probability=probability)


def sample_transfer_theory(sp: ScenarioParams) -> SampleTransferTheory:
    """Bias, noise and dissimilarity terms of pooling both tasks' samples."""
    pooled = sp.n_pooled
    regime = _require_defined(pooled_regime(sp), "sample transfer", sp.p, pooled)
    noise_load = sp.n1 * (sp.sigma1 ** 2 + sp.q1_norm ** 2) + sp.n2 * (sp.sigma2 ** 2 + sp.q2_norm ** 2)

    if regime is Regime.OVERPARAMETERIZED:
        k_bias = (1.0 - pooled / sp.p) * sp.w2_norm ** 2 + sp.q2_norm ** 2
        k_noise = noise_load / (sp.p - pooled - 1)
    else:
        k_bias = sp.q2_norm ** 2
        k_noise = sp.p * noise_load / (pooled * (pooled - sp.p - 1))

    return SampleTransferTheory(
        k_bias=TheoryResult.exact(k_bias, regime),
        k_noise=TheoryResult.exact(k_noise, regime),
        k_similarity=_similarity_bounds(sp, regime),
    )


def bias_concentration_bound(d: int, n: int) -> float:
    """Factor bounding ||(I - P)a||^2 / ||a||^2 with probability at least 1 - 2/d,
    for P the projection onto the span of n Gaussian vectors in d dimensions."""
    if d <= n:
        raise RegimeMismatchError(f"concentration bound needs d > n, got d={d}, n={n}")
    spare = d - n
    denominator = d - 2.0 * math.sqrt(d * math.log(d))
    if denominator <= 0:
        raise TheoryError(f"concentration bound undefined for d={d}")
    return (spare + 2.0 * math.sqrt(spare * math.log(d)) + 2.0 * math.log(d)) / denominator


def fine_tune_constants(sp: ScenarioParams) -> FineTuneConstants:
    """The constants k~ and C that scale the fine-tuning variance bound."""
    pooled = sp.n_pooled
    if sp.p < 1:
        raise TheoryError(f"fine-tuning constants need p >= 1, got {sp.p}")
    denominator = pooled - 2.0 * math.sqrt(pooled * math.log(pooled))
    if denominator <= 0:
        raise TheoryError(f"k~ undefined: non-positive denominator for pooled n={pooled}")

    k_tilde = (sp.p + 2.0 * math.sqrt(sp.p * math.log(sp.p)) + 2.0 * math.log(sp.p)) / denominator
    source = 3.0 * (k_tilde * sp.sigma1 ** 2 + k_tilde * sp.q1_norm ** 2 + sp.delta ** 2) * _log_spread(sp.n1)
    target = 3.0 * (sp.sigma2 ** 2 + k_tilde * sp.sigma2 ** 2 + k_tilde * sp.q2_norm ** 2) * _log_spread(sp.n2)
    return FineTuneConstants(k_tilde=k_tilde, c_const=source + target)


def fine_tune_theory(sp: ScenarioParams) -> FineTuneTheory:
    """Expected fine-tuning bias and the high-probability variance bound."""
    regime = _require_defined(fine_tune_regime(sp), "fine-tuning", sp.p2, sp.n2)
    c_const = fine_tune_constants(sp).c_const
    spread = math.sqrt(2.0 * math.log(sp.n2))

    if regime is Regime.OVERPARAMETERIZED:
        t_bias = (1.0 - sp.n2 / sp.p2) * sp.q2_norm ** 2
        base = math.sqrt(sp.p2) - math.sqrt(sp.n2) - spread
    else:
        t_bias = 0.0
        base = math.sqrt(sp.n2) - math.sqrt(sp.p2) - spread
    if base <= 0:
        raise TheoryError(f"fine-tuning variance bound undefined for p2={sp.p2}, n2={sp.n2}")

    t_bias_terms = {}
    if regime is Regime.OVERPARAMETERIZED:
        try:
            t_bias_terms["high_probability_upper"] = bias_concentration_bound(sp.p2, sp.n2) * sp.q2_norm ** 2
        except TheoryError:
            pass

    return FineTuneTheory(
        t_bias=TheoryResult.exact(t_bias, regime, **t_bias_terms),
        t_var=TheoryResult.bounds(0.0, c_const / base ** 2, regime),
    )
