"""Shared fixtures; puts scripts/ on the import path the way the entry points run."""

import sys
from pathlib import Path

import numpy as np
import pytest

SCRIPTS_DIR = Path(__file__).resolve().parent.parent / "scripts"
if str(SCRIPTS_DIR) not in sys.path:
    sys.path.insert(0, str(SCRIPTS_DIR))

from model import LearnerConfig, TruthMode, make_ground_truth  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_truth():
    return make_ground_truth(3, 2, 2, w1_norm=1.0, mode=TruthMode.OFFSET, delta=0.5,
                             q1_norm=0.5, q2_norm=0.5, sigma1=0.3, sigma2=0.3)


@pytest.fixture
def small_learner():
    return LearnerConfig(p=4, p1=3, p2=3, n1=30, n2=20)


@pytest.fixture
def noiseless_truth():
    return make_ground_truth(3, 2, 2, w1_norm=1.0, q1_norm=1.0, q2_norm=1.0)
