import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from evkit.models import ConjugateGaussianModel, GaussianUniformModel  # noqa: E402


@pytest.fixture
def conjugate():
    data = np.random.default_rng(0).normal(0.7, 1.0, 20)
    return ConjugateGaussianModel(0.0, 4.0, 1.0, data)


@pytest.fixture
def gauss_uniform():
    data = np.random.default_rng(0).normal(0.7, 1.0, 20)
    return GaussianUniformModel.from_data(data, 1.0, -5.0, 5.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
