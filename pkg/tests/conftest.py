import os
import sys

import pytest

from gasp import tensor as T

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture(autouse=True)
def _checked_mode(request):
    """Tests run with the NaN/Inf scan on unless marked ``unchecked``."""
    enabled = request.node.get_closest_marker("unchecked") is None
    with T.checked_mode(enabled):
        yield


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
