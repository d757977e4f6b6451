import numpy as np
import pytest

from asmlab.data import generate_clusters, inject_symmetric_noise

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_noisy():
    ds = generate_clusters(3, 4, 60, 5.0, 0.2, seed=7, n_test_per_class=20)
    return inject_symmetric_noise(ds, 0.3, seed=8)


def random_probs(rng, n, k, sharpness=3.0):
    z = rng.normal(scale=sharpness, size=(n, k))
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
