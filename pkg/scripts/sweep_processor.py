#!/usr/bin/env python3
"""
Transfer Lab Sweep Processor
Runs replicated Monte Carlo experiments over a grid of one swept
parameter and reduces them to per-point records with matching theory.

Each replicate draws from its own stream derived from
(master seed, point index, replicate index), so the records do not
depend on how many worker threads run the replicates or in which order
they finish.
"""

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from linalg import Regime
from model import GroundTruth, LearnerConfig, Sacrifice, extend_truth
from pipeline import (decompose_source, sample_transfer, train_source,
                      transfer_option_a, transfer_option_b)
from theory import (ScenarioParams, TheoryError, TheoryResult, combine, fine_tune_theory,
                    option_a_from_lco, option_a_regime, option_b_error, option_b_from_lco,
                    option_b_regime, pooled_regime, sample_transfer_theory, step1_regime,
                    transferring_error)

logger = logging.getLogger(__name__)

SWEEP_VARIABLES = ("p", "p1", "p2", "n1", "n2", "sigma1", "sigma2")


class SweepMethod(Enum):
    """What each replicate measures."""
    TRANSFER_ERROR = "TransferError"
    OPTION_A = "OptionA"
    OPTION_B = "OptionB"
    SAMPLE_TRANSFER = "SampleTransfer"
    SAMPLE_TRANSFER_FINE_TUNED = "SampleTransferFineTuned"


# decomposition entries reported as term1 / term2
TERM_COLUMNS = {
    SweepMethod.TRANSFER_ERROR: ("lco_noiseless", "lco_noise"),
    SweepMethod.OPTION_A: ("common_error", "specific_error"),
    SweepMethod.OPTION_B: ("common_error", "specific_error"),
    SweepMethod.SAMPLE_TRANSFER: ("k_bias", "k_noise"),
    SweepMethod.SAMPLE_TRANSFER_FINE_TUNED: ("t_bias", "t_var"),
}


@dataclass(frozen=True)
class SweepSpec:
    """One swept variable, its grid, and how to replicate each point."""
    variable: str
    values: Tuple[float, ...]
    replicates: int
    master_seed: int
    method: SweepMethod
    threads: int = 1
    budget: Optional[int] = None
    keep_replicates: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "method", SweepMethod(self.method))
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"cannot sweep '{self.variable}', choose one of {', '.join(SWEEP_VARIABLES)}")
        if not self.values:
            raise ValueError("sweep grid is empty")
        if self.replicates < 2:
            raise ValueError(f"need at least 2 replicates per point, got {self.replicates}")
        if self.threads < 1:
            raise ValueError(f"need at least one worker thread, got {self.threads}")
        if self.budget is not None and self.variable not in ("p", "p1"):
            raise ValueError("a fixed budget p+p1 only applies when sweeping p or p1")


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    model_error: float
    transfer_error: float
    decomposition: Dict[str, float]


@dataclass(frozen=True)
class SweepRecord:
    """Aggregated replicates at one grid point."""
    variable: str
    value: float
    regime: Regime
    empirical_mean: float
    empirical_se: float
    transfer_mean: float
    transfer_se: float
    term_means: Dict[str, float]
    term_ses: Dict[str, float]
    theory: Optional[TheoryResult]
    replicates: int
    params: Optional[ScenarioParams] = None
    replicate_terms: Optional[Dict[str, Tuple[float, ...]]] = field(default=None, repr=False)

    def term(self, name: str) -> Optional[float]:
        return self.term_means.get(name)


def replicate_rng(master_seed: int, point_index: int, replicate_index: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(master_seed, spawn_key=(point_index, replicate_index))
    return np.random.default_rng(sequence)


def summarize(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and standard error with compensated summation."""
    count = len(values)
    if count < 2:
        raise ValueError(f"need at least 2 values to estimate a standard error, got {count}")
    mean = math.fsum(values) / count
    variance = math.fsum((v - mean) ** 2 for v in values) / (count - 1)
    return mean, math.sqrt(variance / count)


def apply_sweep_value(variable: str, value: float, truth: GroundTruth, cfg: LearnerConfig,
                      budget: Optional[int] = None) -> Tuple[GroundTruth, LearnerConfig]:
    """Ground truth and learner config at one grid point."""
    if variable in ("sigma1", "sigma2"):
        return replace(truth, **{variable: float(value)}), cfg

    count = int(round(value))
    changes = {variable: count}
    if budget is not None:
        partner = "p1" if variable == "p" else "p"
        changes[partner] = budget - count
    return truth, replace(cfg, **changes)


def stage_regime(method: SweepMethod, sp: ScenarioParams) -> Regime:
    """Regime of the training step that dominates the method's error."""
    if method is SweepMethod.TRANSFER_ERROR:
        return step1_regime(sp)
    if method is SweepMethod.OPTION_A:
        return option_a_regime(sp)
    if method is SweepMethod.OPTION_B:
        return option_b_regime(sp)
    return pooled_regime(sp)


def theory_for(method: SweepMethod, sp: ScenarioParams) -> Optional[TheoryResult]:
    """Matching closed form for a grid point, or None where none is defined."""
    try:
        if method is SweepMethod.TRANSFER_ERROR:
            return transferring_error(sp)
        if method is SweepMethod.OPTION_A:
            return option_a_from_lco(sp, transferring_error(sp))
        if method is SweepMethod.OPTION_B:
            if option_b_regime(sp) is Regime.UNDERPARAMETERIZED:
                return option_b_error(sp, 0.0)
            return option_b_from_lco(sp, transferring_error(sp))

        pooled = sample_transfer_theory(sp)
        if method is SweepMethod.SAMPLE_TRANSFER:
            return pooled.total()

        if pooled_regime(sp) is not Regime.UNDERPARAMETERIZED:
            logger.debug(f"No closed form for {method.value}: pooled step is {pooled_regime(sp).value}")
            return None
        fine = fine_tune_theory(sp)
        common_bias = pooled.k_bias.lower - sp.q2_norm ** 2
        return combine(TheoryResult.exact(max(common_bias, 0.0), pooled.k_bias.regime),
                       fine.t_bias, fine.t_var, pooled.k_noise, pooled.k_similarity)
    except TheoryError as e:
        logger.debug(f"No closed form for {method.value}: {e}")
        return None


def run_replicate(method: SweepMethod, truth, cfg: LearnerConfig, rng: np.random.Generator,
                  index: int = 0) -> ReplicateResult:
    """One Monte Carlo replicate of a method on freshly drawn data."""
    if method is SweepMethod.TRANSFER_ERROR:
        source = train_source(truth, cfg, rng)
        parts = decompose_source(source, truth)
        error = float(np.sum((truth.w2e - source.model.w_tilde) ** 2))
        return ReplicateResult(index, error, error, parts)

    if method in (SweepMethod.OPTION_A, SweepMethod.OPTION_B):
        source = train_source(truth, cfg, rng)
        transfer = transfer_option_a if method is SweepMethod.OPTION_A else transfer_option_b
        outcome = transfer(source.model, truth, cfg, rng)
    else:
        fine_tune = method is SweepMethod.SAMPLE_TRANSFER_FINE_TUNED
        outcome = sample_transfer(truth, cfg, rng, fine_tune=fine_tune)

    return ReplicateResult(index, outcome.model_error, outcome.transfer_error, outcome.decomposition)


class SweepProcessor:
    def __init__(self, max_workers: int = 4):
        """Initialize the sweep processor."""
        self.max_workers = max_workers
        self.logger = logging.getLogger(__name__)

    def run_point(self, spec: SweepSpec, point_index: int, truth: GroundTruth, cfg: LearnerConfig,
                  sacrifice: Optional[Sacrifice] = None) -> SweepRecord:
        """Run every replicate at one grid point and reduce them by replicate index."""
        value = spec.values[point_index]
        point_truth, point_cfg = apply_sweep_value(spec.variable, value, truth, cfg, spec.budget)
        extended = extend_truth(point_truth, point_cfg, sacrifice)
        params = ScenarioParams.from_truth(extended, point_cfg)

        results: List[Optional[ReplicateResult]] = [None] * spec.replicates
        workers = min(spec.threads, self.max_workers) if self.max_workers else spec.threads

        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            future_to_index = {
                executor.submit(run_replicate, spec.method, extended, point_cfg,
                                replicate_rng(spec.master_seed, point_index, index), index): index
                for index in range(spec.replicates)
            }

            for future in concurrent.futures.as_completed(future_to_index):
                index = future_to_index[future]
                try:
                    results[index] = future.result()
                except Exception as e:
                    self.logger.error(f"Replicate {index} at {spec.variable}={value} failed: {e}")
                    for f in future_to_index:
                        f.cancel()
                    raise

        return self._reduce(spec, value, results, params)

    def _reduce(self, spec: SweepSpec, value: float, results: List[ReplicateResult],
                params: ScenarioParams) -> SweepRecord:
        mean, se = summarize([r.model_error for r in results])
        transfer_mean, transfer_se = summarize([r.transfer_error for r in results])

        term_means, term_ses = {}, {}
        replicate_terms = {}
        for name in sorted(results[0].decomposition):
            samples = [r.decomposition[name] for r in results]
            term_means[name], term_ses[name] = summarize(samples)
            replicate_terms[name] = tuple(samples)

        return SweepRecord(
            variable=spec.variable,
            value=float(value),
            regime=stage_regime(spec.method, params),
            empirical_mean=mean,
            empirical_se=se,
            transfer_mean=transfer_mean,
            transfer_se=transfer_se,
            term_means=term_means,
            term_ses=term_ses,
            theory=theory_for(spec.method, params),
            replicates=spec.replicates,
            params=params,
            replicate_terms=replicate_terms if spec.keep_replicates else None,
        )

    def process_sweep(self, spec: SweepSpec, truth: GroundTruth, cfg: LearnerConfig,
                      sacrifice: Optional[Sacrifice] = None) -> List[SweepRecord]:
        """Run all grid points in order."""
        self.logger.info(
            f"Sweeping {spec.variable} over {len(spec.values)} points "
            f"({spec.method.value}, {spec.replicates} replicates, {spec.threads} threads)"
        )
        records = []
        for point_index, value in enumerate(spec.values):
            record = self.run_point(spec, point_index, truth, cfg, sacrifice)
            if record.theory is None:
                self.logger.debug(f"{spec.variable}={value}: no closed form ({record.regime.value})")
            records.append(record)
        return records

    def generate_sweep_report(self, spec: SweepSpec, records: List[SweepRecord]) -> Dict:
        """Summary of a finished sweep."""
        with_theory = [r for r in records if r.theory is not None]
        return {
            "sweep_summary": {
                "variable": spec.variable,
                "method": spec.method.value,
                "points": len(records),
                "replicates": spec.replicates,
                "threshold_points": len([r for r in records if r.regime is Regime.THRESHOLD]),
                "points_with_theory": len(with_theory),
                "finished": datetime.now().isoformat(),
            },
            "minimum": min(((r.value, r.empirical_mean) for r in records), key=lambda pair: pair[1]),
        }


def run_sweep(spec: SweepSpec, truth: GroundTruth, cfg: LearnerConfig,
              sacrifice: Optional[Sacrifice] = None) -> List[SweepRecord]:
    """Run a sweep with one worker pool per grid point."""
    return SweepProcessor(max_workers=spec.threads).process_sweep(spec, truth, cfg, sacrifice)
