import numpy as np
import pytest

from polytail.data import Dataset

_CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def report(number, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed

    return report


def signed_dataset(z) -> Dataset:
    """Dataset whose signed features are exactly the rows of ``z`` (all labels +1)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return Dataset.from_arrays(z, np.ones(len(z)))


@pytest.fixture
def two_points():
    return signed_dataset([[1.0, 0.0], [0.0, 1.0]])
