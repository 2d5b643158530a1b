from pathlib import Path

import numpy as np
import pytest

from sips.oracle import GaussianPairComponent, GaussianPairMixture
from sips.schedule import NoiseSchedule

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def single(var_ss=1.0, var_yy=2.0, cov_sy=1.0, mean_s=0.0, mean_y=0.0):
    return GaussianPairMixture(
        (GaussianPairComponent(1.0, [mean_s], [mean_y], [var_ss], [var_yy], [cov_sy]),)
    )


@pytest.fixture
def toy_prior():
    """S ~ N(0, 1), Y = S + N with Var(N) = 1."""
    return single()


@pytest.fixture
def bimodal_prior():
    return GaussianPairMixture(
        (
            GaussianPairComponent(0.5, [-1.5], [-1.5], [0.25], [0.5], [0.25]),
            GaussianPairComponent(0.5, [1.5], [1.5], [0.25], [0.5], [0.25]),
        )
    )


@pytest.fixture
def mixture_2d():
    return GaussianPairMixture(
        (
            GaussianPairComponent(
                0.3, [1.0, -0.5], [0.5, 0.0], [0.5, 1.2], [0.9, 1.5], [0.3, -0.4]
            ),
            GaussianPairComponent(
                0.7, [-0.8, 0.4], [-1.0, 0.2], [0.7, 0.4], [1.1, 0.8], [0.6, 0.1]
            ),
        )
    )


@pytest.fixture
def sched():
    return NoiseSchedule(c=0.5, a=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# One verdict line per acceptance criterion, printed after the run.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
