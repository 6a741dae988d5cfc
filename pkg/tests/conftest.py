"""Shared pytest plumbing: the acceptance gate prints one verdict line per criterion."""

import pytest

_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Mutable sink for [ACCEPTANCE n] verdict lines, echoed after the run."""
    return _LINES


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance gate")
        for line in _LINES:
            terminalreporter.write_line(line)
