import numpy as np
import pytest
from hypothesis import settings
from scipy.special import logit

from croco.nnmodel import MlpClassifier

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# hidden ReLU units relu(x + OFFSET) reproduce the identity for x > -OFFSET
OFFSET = 100.0


def constant_model(p: float, n: int = 2, threshold: float = 0.5) -> MlpClassifier:
    """f(x) = p everywhere (p may be 0 or 1 for saturated outputs)."""
    bias = {0.0: -800.0, 1.0: 800.0}.get(p)
    bias = float(logit(p)) if bias is None else bias
    return MlpClassifier((np.zeros((n, 1)), np.zeros((1, 1))), (np.zeros(1), np.array([bias])), threshold)


def linear_model(w, b: float = 0.0, threshold: float = 0.5) -> MlpClassifier:
    """f(x) = sigmoid(w.x + b), exact for inputs above -OFFSET."""
    w = np.asarray(w, dtype=np.float64)
    n = len(w)
    return MlpClassifier((np.eye(n), w.reshape(n, 1)),
                         (np.full(n, OFFSET), np.array([b - OFFSET * w.sum()])), threshold)


def random_model(dims, seed: int, bias_scale: float = 0.5, threshold: float = 0.5) -> MlpClassifier:
    return MlpClassifier.initialize(dims, seed=seed, threshold=threshold, bias_scale=bias_scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
CRITERIA: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {name} ({detail})"
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
