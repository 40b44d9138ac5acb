import math
from functools import lru_cache

import pytest

from gensync.analysis import bounds_report
from gensync.model import GeneratorParams
from gensync.signals import Disturbance, LoadProfile
from gensync.sim import Scenario, run

REFERENCE_LOAD = LoadProfile(0.5, 0.01, 0.01, 5.0, "sinusoid")


def reference_scenario(d_over_pi: float, **changes) -> Scenario:
    p = GeneratorParams.reference()
    sc = Scenario(p, REFERENCE_LOAD, Disturbance("constant", d_over_pi * math.pi))
    return sc.with_(**changes) if changes else sc


@lru_cache(maxsize=None)
def reference_run(d_over_pi: float):
    """Full 600 s scenario; cached because several modules inspect the same runs."""
    return run(reference_scenario(d_over_pi))


@lru_cache(maxsize=None)
def reference_bounds(d_over_pi: float):
    return bounds_report(GeneratorParams.reference(), REFERENCE_LOAD, d_over_pi * math.pi)


@pytest.fixture(scope="session")
def ref_params():
    return GeneratorParams.reference()


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
