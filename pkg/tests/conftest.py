import numpy as np
import pytest

from iosicp.fmcore import FeatureGrid

_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict line; the lines are echoed in the terminal summary."""
    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


def random_grid(rng, c, h, w, scale=1.0) -> FeatureGrid:
    return FeatureGrid(scale * rng.standard_normal((c, h, w)), 1.0, (0.0, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
