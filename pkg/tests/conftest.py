import numpy as np
import pytest

from robustgrowth import beta_model, build_grid, solve_model, worst_case


@pytest.fixture(scope="session")
def beta_star():
    """Beta model with the default parameters and its closed-form oracle."""
    return beta_model()


@pytest.fixture(scope="session")
def beta_solved(beta_star):
    model, _ = beta_star
    return solve_model(model, 401)


@pytest.fixture(scope="session")
def beta_coarse(beta_star):
    model, _ = beta_star
    return solve_model(model, 201)


@pytest.fixture(scope="session")
def beta_worst(beta_coarse):
    return worst_case(beta_coarse, [(0.2, 0.8)], [(0.1, 0.9)])


@pytest.fixture
def unit_grid():
    from robustgrowth import DomainSpec
    return build_grid(DomainSpec((0.0,), (1.0,), (0.0,), (1.0,), 0.1), 3)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    """Store and print one acceptance line; the summary hook repeats them at the end."""
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title} ({detail})"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line)
