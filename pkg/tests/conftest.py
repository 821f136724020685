import numpy as np
import pytest

from batchmarl.mdp import generate_random_mdp, sample_batch

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_instance():
    spec = generate_random_mdp(3, 4, seed=11)
    ds = sample_batch(spec, 500, np.random.default_rng(5))
    return spec, ds


@pytest.fixture
def tiny_instance():
    spec = generate_random_mdp(2, 3, seed=3)
    ds = sample_batch(spec, 120, np.random.default_rng(8))
    return spec, ds
