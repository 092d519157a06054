"""Shared fixtures: seeded randomness and cached manufactured-solution runs."""

import time

import numpy as np
import pytest

from thermoporo.params import passing_preset
from thermoporo.verification import convergence_study, default_case


def pytest_addoption(parser):
    parser.addoption("--seed", action="store", type=int, default=0, help="seed for randomised tests")


@pytest.fixture
def seed(request) -> int:
    return request.config.getoption("--seed")


@pytest.fixture
def rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


@pytest.fixture(scope="session")
def preset():
    return passing_preset()


@pytest.fixture(scope="session")
def mms_case():
    return default_case(passing_preset())


@pytest.fixture(scope="session")
def mms_study(mms_case):
    """Levels 4 to 32 with ``dt = h/4`` up to ``T_f = 0.5``; the states are kept for energy checks."""
    start = time.perf_counter()
    table = convergence_study(mms_case, levels=(4, 8, 16, 32), T_f=0.5, dt_factor=0.25, keep_results=True)
    table.elapsed = time.perf_counter() - start
    return table


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one summary line per acceptance criterion; printed at the end of the run."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
