#!/usr/bin/env python3
"""
Transfer Lab Ground-Truth Model
Value types for the two-task linear model: the true parameters, the
learner's feature selection, and the zero-padded truth the learner sees.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, Optional, Tuple

import numpy as np


class DimensionError(ValueError):
    """Vector lengths disagree with declared feature counts."""


class Task(Enum):
    """Which of the two tasks a dataset belongs to."""
    SOURCE = "source"
    TARGET = "target"


class TruthMode(Enum):
    """How the target's common parameters relate to the source's."""
    EQUAL = "equal"
    OPPOSITE = "opposite"
    OFFSET = "offset"


def _frozen_vector(values) -> np.ndarray:
    vector = np.array(values, dtype=float).reshape(-1)
    vector.flags.writeable = False
    return vector


def _frozen_matrix(values) -> np.ndarray:
    matrix = np.array(values, dtype=float)
    matrix.flags.writeable = False
    return matrix


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """True parameters and noise levels of the source and target tasks."""
    s: int
    s1: int
    s2: int
    w1: np.ndarray
    w2: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    sigma1: float = 0.0
    sigma2: float = 0.0

    def __post_init__(self):
        for name in ("w1", "w2", "q1", "q2"):
            object.__setattr__(self, name, _frozen_vector(getattr(self, name)))

        for name, count in (("s", self.s), ("s1", self.s1), ("s2", self.s2)):
            if count < 0:
                raise DimensionError(f"{name} must be non-negative, got {count}")

        expected = (("w1", self.s), ("w2", self.s), ("q1", self.s1), ("q2", self.s2))
        for name, count in expected:
            actual = getattr(self, name).size
            if actual != count:
                raise DimensionError(f"{name} has length {actual}, expected {count}")

        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ValueError(f"noise levels must be non-negative, got {self.sigma1}, {self.sigma2}")


@dataclass(frozen=True)
class LearnerConfig:
    """Selected feature counts and sample sizes for both tasks."""
    p: int
    p1: int
    p2: int
    n1: int
    n2: int
    allow_sacrifice: bool = False

    def __post_init__(self):
        for name in ("p", "p1", "p2"):
            if getattr(self, name) < 0:
                raise DimensionError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("n1", "n2"):
            if getattr(self, name) < 1:
                raise DimensionError(f"{name} must be at least 1, got {getattr(self, name)}")

    @property
    def n_pooled(self) -> int:
        return self.n1 + self.n2

    def samples(self, task: Task) -> int:
        return self.n1 if task is Task.SOURCE else self.n2


@dataclass(frozen=True)
class Sacrifice:
    """True-feature indices deliberately left out of the learner's selection."""
    common: FrozenSet[int] = frozenset()
    source: FrozenSet[int] = frozenset()
    target: FrozenSet[int] = frozenset()

    def __post_init__(self):
        for name in ("common", "source", "target"):
            object.__setattr__(self, name, frozenset(int(i) for i in getattr(self, name)))

    @property
    def is_empty(self) -> bool:
        return not (self.common or self.source or self.target)


@dataclass(frozen=True, eq=False)
class ExtendedTruth:
    """Truth expressed on the learner's selected features.

    Kept true parameters occupy the first coordinates of each vector and
    the redundant coordinates are zero. Sacrificed parameters no longer
    appear here; their energy is carried by the effective noise levels.
    """
    w1e: np.ndarray
    w2e: np.ndarray
    q1e: np.ndarray
    q2e: np.ndarray
    effective_sigma1: float
    effective_sigma2: float

    def __post_init__(self):
        for name in ("w1e", "w2e", "q1e", "q2e"):
            object.__setattr__(self, name, _frozen_vector(getattr(self, name)))
        if self.w1e.size != self.w2e.size:
            raise DimensionError(f"common vectors differ in length: {self.w1e.size} vs {self.w2e.size}")

    @property
    def p(self) -> int:
        return self.w1e.size

    @property
    def p1(self) -> int:
        return self.q1e.size

    @property
    def p2(self) -> int:
        return self.q2e.size

    @property
    def delta(self) -> float:
        return float(np.linalg.norm(self.w2e - self.w1e))

    def parts(self, task: Task) -> Tuple[np.ndarray, np.ndarray, float]:
        """Common vector, specific vector and noise level of one task."""
        if task is Task.SOURCE:
            return self.w1e, self.q1e, self.effective_sigma1
        return self.w2e, self.q2e, self.effective_sigma2


@dataclass(frozen=True, eq=False)
class Dataset:
    """One realization of a task: columns of X and Z are samples."""
    X: np.ndarray
    Z: np.ndarray
    y: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "X", _frozen_matrix(self.X))
        object.__setattr__(self, "Z", _frozen_matrix(self.Z))
        object.__setattr__(self, "y", _frozen_vector(self.y))
        object.__setattr__(self, "eps", _frozen_vector(self.eps))

    @property
    def n(self) -> int:
        return self.y.size


def _check_indices(indices: Iterable[int], count: int, label: str):
    for index in indices:
        if not 0 <= index < count:
            raise DimensionError(f"cannot sacrifice {label} feature {index}: only {count} exist")


def _pad_kept(values: np.ndarray, dropped: FrozenSet[int], capacity: int,
              allow_sacrifice: bool, label: str) -> Tuple[np.ndarray, float]:
    """Place kept entries first in a zero vector of length capacity.

    Returns the padded vector and the squared norm of everything left out.
    """
    kept = [i for i in range(values.size) if i not in dropped]
    if len(kept) > capacity:
        if not allow_sacrifice:
            raise DimensionError(
                f"{label}: learner selects {capacity} features but {len(kept)} true features must be kept"
            )
        # trailing true features that do not fit are absorbed into noise
        kept = kept[:capacity]

    missing = [i for i in range(values.size) if i not in kept]
    padded = np.zeros(capacity)
    padded[:len(kept)] = values[kept]
    return padded, float(np.sum(values[missing] ** 2))


def extend_truth(gt: GroundTruth, cfg: LearnerConfig,
                 sacrifice: Optional[Sacrifice] = None) -> ExtendedTruth:
    """Express a ground truth on the learner's features, absorbing sacrificed ones into noise."""
    sacrifice = sacrifice or Sacrifice()
    if not sacrifice.is_empty and not cfg.allow_sacrifice:
        raise DimensionError("sacrificing true features requires allow_sacrifice in the learner config")

    _check_indices(sacrifice.common, gt.s, "common")
    _check_indices(sacrifice.source, gt.s1, "source-specific")
    _check_indices(sacrifice.target, gt.s2, "target-specific")

    w1e, w1_missing = _pad_kept(gt.w1, sacrifice.common, cfg.p, cfg.allow_sacrifice, "common part")
    w2e, w2_missing = _pad_kept(gt.w2, sacrifice.common, cfg.p, cfg.allow_sacrifice, "common part")
    q1e, q1_missing = _pad_kept(gt.q1, sacrifice.source, cfg.p1, cfg.allow_sacrifice, "source-specific part")
    q2e, q2_missing = _pad_kept(gt.q2, sacrifice.target, cfg.p2, cfg.allow_sacrifice, "target-specific part")

    return ExtendedTruth(
        w1e=w1e,
        w2e=w2e,
        q1e=q1e,
        q2e=q2e,
        effective_sigma1=math.sqrt(gt.sigma1 ** 2 + w1_missing + q1_missing),
        effective_sigma2=math.sqrt(gt.sigma2 ** 2 + w2_missing + q2_missing),
    )


def sample_dataset(truth: ExtendedTruth, task: Task, n: int, rng: np.random.Generator) -> Dataset:
    """Draw n i.i.d. Gaussian samples of one task.

    Draw order is X, then Z, then the noise, so a given stream always
    yields the same dataset.
    """
    if n < 1:
        raise ValueError(f"sample count must be at least 1, got {n}")

    w, q, sigma = truth.parts(task)
    X = rng.standard_normal((w.size, n))
    Z = rng.standard_normal((q.size, n))
    eps = sigma * rng.standard_normal(n)
    y = X.T @ w + Z.T @ q + eps
    return Dataset(X=X, Z=Z, y=y, eps=eps)


def _spread(norm: float, count: int) -> np.ndarray:
    if count == 0:
        return np.zeros(0)
    return np.full(count, norm / math.sqrt(count))


def offset_direction(s: int) -> np.ndarray:
    """Fixed unit direction used by the offset mode, orthogonal to the spread w1 when s >= 2."""
    u = np.zeros(s)
    if s == 0:
        return u
    if s == 1:
        u[0] = 1.0
        return u
    u[0], u[1] = 1.0 / math.sqrt(2.0), -1.0 / math.sqrt(2.0)
    return u


def make_ground_truth(s: int, s1: int, s2: int, w1_norm: float = 1.0,
                      mode: TruthMode = TruthMode.EQUAL, delta: float = 0.0,
                      q1_norm: float = 0.0, q2_norm: float = 0.0,
                      sigma1: float = 0.0, sigma2: float = 0.0) -> GroundTruth:
    """Build a ground truth from norms instead of explicit vectors."""
    mode = TruthMode(mode)
    w1 = _spread(w1_norm, s)

    if mode is TruthMode.EQUAL:
        w2 = w1.copy()
    elif mode is TruthMode.OPPOSITE:
        w2 = -w1
    else:
        if s == 0 and delta != 0:
            raise DimensionError("an offset needs at least one common feature")
        w2 = w1 + delta * offset_direction(s)

    return GroundTruth(
        s=s, s1=s1, s2=s2,
        w1=w1, w2=w2,
        q1=_spread(q1_norm, s1),
        q2=_spread(q2_norm, s2),
        sigma1=sigma1, sigma2=sigma2,
    )


def ground_truth_to_dict(gt: GroundTruth) -> Dict:
    """Explicit-vector form of a ground truth, as stored in manifests."""
    return {
        "s": gt.s, "s1": gt.s1, "s2": gt.s2,
        "w1": gt.w1.tolist(), "w2": gt.w2.tolist(),
        "q1": gt.q1.tolist(), "q2": gt.q2.tolist(),
        "sigma1": float(gt.sigma1), "sigma2": float(gt.sigma2),
    }


def ground_truth_from_dict(data: Dict) -> GroundTruth:
    """Build a ground truth from explicit vectors or from the norm-based constructor form."""
    data = dict(data)
    sigma1 = float(data.pop("sigma1", 0.0))
    sigma2 = float(data.pop("sigma2", 0.0))

    if "w1" in data:
        w1 = data["w1"]
        w2 = data.get("w2", w1)
        q1, q2 = data.get("q1", []), data.get("q2", [])
        return GroundTruth(
            s=int(data.get("s", len(w1))),
            s1=int(data.get("s1", len(q1))),
            s2=int(data.get("s2", len(q2))),
            w1=w1, w2=w2, q1=q1, q2=q2,
            sigma1=sigma1, sigma2=sigma2,
        )

    allowed = {"s", "s1", "s2", "w1_norm", "mode", "delta", "q1_norm", "q2_norm"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown ground_truth keys: {', '.join(sorted(unknown))}")
    return make_ground_truth(sigma1=sigma1, sigma2=sigma2, **data)


def learner_to_dict(cfg: LearnerConfig) -> Dict:
    return {
        "p": cfg.p, "p1": cfg.p1, "p2": cfg.p2,
        "n1": cfg.n1, "n2": cfg.n2,
        "allow_sacrifice": cfg.allow_sacrifice,
    }


def learner_from_dict(data: Dict) -> LearnerConfig:
    fields = ("p", "p1", "p2", "n1", "n2")
    missing = [name for name in fields if name not in data]
    if missing:
        raise ValueError(f"learner section is missing {', '.join(missing)}")
    return LearnerConfig(
        *(int(data[name]) for name in fields),
        allow_sacrifice=bool(data.get("allow_sacrifice", False)),
    )
