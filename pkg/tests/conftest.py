import numpy as np
import pytest

_criterion_lines = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def record_criterion(line: str):
    """Collect an acceptance-criterion result for the end-of-run summary."""
    _criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.write_line(line)
