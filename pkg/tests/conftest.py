"""Shared fixtures: the acceptance-criteria report printed after the run."""

import pytest

_CRITERION_LINES = []


@pytest.fixture(scope="session")
def criterion_log():
    """Append (number, line) tuples; the terminal summary prints them sorted."""
    return _CRITERION_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(_CRITERION_LINES, key=lambda item: item[0]):
        terminalreporter.write_line(line)
