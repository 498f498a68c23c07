import time

import pytest

from npprior import SolverConfig, solve_prior

_criteria_lines = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
    _criteria_lines.append(line)
    print(line)


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _criteria_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criteria_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def timed_solve():
    """Default-configuration solve shared by acceptance and CLI tests."""
    start = time.perf_counter()
    report = solve_prior(SolverConfig())
    return report, time.perf_counter() - start


@pytest.fixture(scope="session")
def solved_report(timed_solve):
    return timed_solve[0]


@pytest.fixture(scope="session")
def small_report():
    return solve_prior(SolverConfig(n=64, xi=0.5, restarts=2, seed=3))
