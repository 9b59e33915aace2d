import sys

import numpy as np
import pytest

from mixreg.core import Dataset, MixtureParams


def random_params(rng, K, q, p, scale=1.0):
    pi = rng.dirichlet(np.full(K, 3.0))
    Phi = scale * rng.standard_normal((K, q, p))
    P = rng.uniform(0.5, 2.0, size=(K, q))
    return MixtureParams(pi, Phi, P)


def random_dataset(rng, n, p, q, K=2, spread=3.0):
    """Small labelled mixture-of-regressions sample with well separated components."""
    x = rng.standard_normal((n, p))
    labels = rng.integers(0, K, size=n)
    B = spread * rng.standard_normal((K, q, p))
    y = np.einsum("imj,ij->im", B[labels], x) + rng.standard_normal((n, q))
    return Dataset(x, y, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.format_results():
        terminalreporter.write_line(line)
