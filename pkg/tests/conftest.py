import numpy as np
import pytest

from rmdpg.mesh import BCKind, build_lshape, build_structured_square


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def square2():
    """The 2-triangle hard-clamped unit square."""
    return build_structured_square(1, BCKind.HARD_CLAMPED)


@pytest.fixture
def square32():
    return build_structured_square(4, BCKind.HARD_CLAMPED)


@pytest.fixture
def lshape():
    return build_lshape(1)


_ACCEPTANCE_OUTCOMES = {}


def _criterion_of(nodeid):
    name = nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in nodeid or not name.startswith("test_criterion_"):
        return None
    return int(name.split("_")[2])


def pytest_runtest_logreport(report):
    n = _criterion_of(report.nodeid)
    if n is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE_OUTCOMES.get(n, "PASS")
        now = "PASS" if report.outcome == "passed" else ("SKIP" if report.outcome == "skipped" else "FAIL")
        _ACCEPTANCE_OUTCOMES[n] = "FAIL" if "FAIL" in (prev, now) else now


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_OUTCOMES:
        return
    from helpers import ACCEPTANCE_DETAILS

    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE_OUTCOMES):
        detail = ACCEPTANCE_DETAILS.get(n, "no result recorded")
        terminalreporter.write_line(f"{_ACCEPTANCE_OUTCOMES[n]} criterion {n}: {detail}")
