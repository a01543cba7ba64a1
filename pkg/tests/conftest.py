import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gaussian_problem(rng, n=40, p=8, s=2, noise=1.0):
    z = rng.standard_normal((n, p))
    coef = np.zeros(p)
    coef[:s] = np.linspace(1.0, 0.5, s)
    y = z @ coef + noise * rng.standard_normal(n)
    return z, y


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
