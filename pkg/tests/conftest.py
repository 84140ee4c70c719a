import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from factories import DATA  # noqa: E402

from dsmopt.model import build_misformulated_model, build_model  # noqa: E402
from dsmopt.scenario import load_scenario  # noqa: E402
from dsmopt.schedule import cost_of, extract_schedule, scenario_prices  # noqa: E402
from dsmopt.solver import solve_milp  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-day solves and large oracle enumerations")
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


class Solved:
    def __init__(self, name: str, variant: str):
        import time

        self.scenario = load_scenario(DATA / f"{name}.scenario")
        builder = build_misformulated_model if variant == "misformulated" else build_model
        self.model = builder(self.scenario)
        started = time.perf_counter()
        self.solution = solve_milp(self.model)
        self.seconds = time.perf_counter() - started
        self.schedule = extract_schedule(self.model, self.solution, self.scenario)
        self.cost = cost_of(self.schedule, scenario_prices(self.scenario))


@functools.lru_cache(maxsize=None)
def solved(name: str, variant: str = "correct") -> Solved:
    """Shipped scenario solved once per test session."""
    return Solved(name, variant)


@pytest.fixture
def shipped():
    return solved


# ---------------------------------------------------------------- acceptance summary

_criteria: dict[int, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _criteria[n] = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        terminalreporter.write_line(f"criterion {n}: {_criteria[n]}")
