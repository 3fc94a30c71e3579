import numpy as np
import pytest

from sparsepose.rotations import random_rotation
from sparsepose.synth import random_dictionary
from sparsepose.types import (
    CameraTrajectory,
    CoeffSequence,
    ModelParams,
    Pose2DSequence,
    SequenceEstimate,
)


def random_estimate(rng, n=4, p=6, k=3, dictionary=None):
    """Random but valid estimate with unit-norm Gaussian atoms."""
    D = dictionary or random_dictionary(k, p, seed=int(rng.integers(1 << 30)))
    C = rng.standard_normal((D.size, n))
    R = random_rotation(rng, n)
    T = rng.uniform(0.3, 0.7, size=(n, 2))
    return SequenceEstimate(CoeffSequence(C), CameraTrajectory(R, T), D)


def random_observations(rng, n, p, scale=0.3):
    return Pose2DSequence(0.5 + scale * rng.standard_normal((n, 2, p)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def params():
    return ModelParams()


# acceptance criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
