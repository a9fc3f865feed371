"""Shared pytest plumbing.

The acceptance tests record one verdict line per criterion; the lines are
replayed in a terminal section after the run so they are visible even
with output capture on.
"""

import pytest

_acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_record():
    def record(line: str):
        _acceptance_lines.append(line)
        print(line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
