import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from salaryshare.fixture import bundled_fixture_dir

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURE = bundled_fixture_dir()
SEASONS = ("2016-2017", "2017-2018", "2018-2019")


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURE


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one summary line per acceptance criterion, printed after the run
_CRITERIA = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        props = dict(report.user_properties)
        if "criterion" in props:
            _CRITERIA.append((props["criterion"], report.outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, outcome, detail in sorted(_CRITERIA):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {detail}")
