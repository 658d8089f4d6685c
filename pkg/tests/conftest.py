import numpy as np
import pytest

from satfed.params import MLP, SOFTMAX, Dataset, ModelSpec


def make_batch(spec: ModelSpec, n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, spec.n_features))
    y = rng.integers(0, spec.n_classes, size=n)
    return Dataset(X, y)


@pytest.fixture(params=[SOFTMAX, MLP])
def spec(request):
    return ModelSpec(request.param, n_features=4, n_classes=3, hidden_width=5)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
