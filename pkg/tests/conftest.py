import os

import pytest
from hypothesis import HealthCheck, settings

from screenlab.rng import substream

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return substream(12345, 0)


def within_3se(estimate: float, exact: float, se: float) -> bool:
    return abs(estimate - exact) <= 3 * se


# one pass/fail line per acceptance criterion, printed after the run


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    detail = dict(report.user_properties).get("detail", "")
    _ACCEPTANCE[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[name]
        number = int(name.split("_")[2])
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")


_ACCEPTANCE: dict[str, tuple[str, str]] = {}
