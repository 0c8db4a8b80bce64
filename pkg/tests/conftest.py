import numpy as np
import pytest

from randqb import SpectrumSpec, synthesize


@pytest.fixture(scope="session")
def matrix2_300():
    return synthesize(SpectrumSpec.matrix2(300), rng=5)


@pytest.fixture(scope="session")
def matrix1_200():
    return synthesize(SpectrumSpec.matrix1(200), rng=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def record(label, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
