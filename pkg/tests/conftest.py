import numpy as np
import pytest

from tmvi.flow import ConstrainedFlowParams, FlowConfig, UnconstrainedFlowParams, constrain, init_vector

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_raw(rng: np.random.Generator, degree: int, scale: float = 0.5) -> np.ndarray:
    """Init vector plus noise: moderate slopes so the sigmoid stage never saturates on [-6, 6]."""
    return init_vector(FlowConfig(degree)) + scale * rng.standard_normal(degree + 5)


def random_flow(rng: np.random.Generator, degree: int, scale: float = 0.5) -> ConstrainedFlowParams:
    return constrain(UnconstrainedFlowParams.from_vector(random_raw(rng, degree, scale), degree))


def linear_flow() -> ConstrainedFlowParams:
    """M = 1, theta = (0, 1), a = alpha = 1, b = beta = 0."""
    return ConstrainedFlowParams(a=1.0, b=0.0, theta=np.array([0.0, 1.0]), alpha=1.0, beta=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# Conjugate-normal toy: y_i ~ N(mu, 1), mu ~ N(0, 2^2); data from default_rng(7).normal(2, 1, 10), 6 dp.
TOY_TARGETS = [2.00123, 2.298746, 1.725862, 1.109408, 1.545329, 1.008353, 2.060144, 3.340215, 1.507793, 1.379525]
TOY_PRIOR_SD = 2.0
TOY_NOISE_SD = 1.0
