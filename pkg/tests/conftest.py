import numpy as np
import pytest

from rtescatter.fields import Blob, BlobField, CoefficientSet, ConstantField, HenyeyGreenstein, ScatteringKernel
from rtescatter.geometry import Domain


@pytest.fixture
def ball():
    return Domain(np.zeros(3), 1.0)


@pytest.fixture
def blob_sigma():
    return BlobField([Blob([0.2, 0.0, 0.1], 0.3, 0.8), Blob([-0.3, 0.2, 0.0], 0.25, 0.5)], background=0.3)


@pytest.fixture
def constant_coeffs(ball):
    return CoefficientSet(ball, ConstantField(0.5), ScatteringKernel(ConstantField(0.2)))


@pytest.fixture
def hg_coeffs(ball, blob_sigma):
    return CoefficientSet(ball, blob_sigma, ScatteringKernel(ConstantField(0.2), HenyeyGreenstein(0.5)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_interior(rng, n, radius=1.0, margin=0.95):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = margin * radius * rng.random(n) ** (1 / 3)
    return v * r[:, None]


def random_directions(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; the lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def report(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
