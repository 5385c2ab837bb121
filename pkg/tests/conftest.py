import pytest
from hypothesis import HealthCheck, settings

from mixedplap.geometry import Ball, Box, Params, build_grid

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def interval_grid():
    return build_grid(Box((0.0,), (1.0,)), 1.0 / 64)


@pytest.fixture(scope="session")
def ball1d_grid():
    return build_grid(Ball((0.0,), 1.0), 1.0 / 64)


@pytest.fixture(scope="session")
def small_ball_grid():
    # 32 active cells
    return build_grid(Ball((0.0,), 1.0), 1.0 / 16)


@pytest.fixture(scope="session")
def params_p2():
    return Params(2.0, 0.5, 1)


_CRITERIA = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
        _CRITERIA.append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
