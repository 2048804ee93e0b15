import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def fixture_theory():
    import helpers

    return helpers.fixture_theory()


@pytest.fixture
def fixture_state():
    import helpers

    return helpers.FIXTURE_STATE


def pytest_terminal_summary(terminalreporter):
    import helpers

    if helpers.ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(helpers.ACCEPTANCE):
            terminalreporter.write_line(helpers.ACCEPTANCE[number])
