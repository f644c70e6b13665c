import pytest
from hypothesis import HealthCheck, settings

from subriem.geometry import SubRiemannianStructure
from subriem.lie_core import abelian, engel, heisenberg, heisenberg5

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def heis():
    return SubRiemannianStructure.from_algebra(heisenberg())


@pytest.fixture(scope="session")
def heis5():
    return SubRiemannianStructure.from_algebra(heisenberg5())


@pytest.fixture(scope="session")
def engel_left():
    return SubRiemannianStructure.from_algebra(engel())


@pytest.fixture(scope="session")
def engel_right():
    return SubRiemannianStructure.from_algebra(engel(), vertical="right")


@pytest.fixture(scope="session")
def plane():
    return SubRiemannianStructure.from_algebra(abelian(2))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import CRITERIA, RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        passed, detail = RESULTS.get(number, (None, "not run"))
        verdict = "NOT RUN" if passed is None else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"[{verdict}] {number}. {title}: {detail}")
