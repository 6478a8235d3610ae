"""Shared pytest plumbing: collects acceptance-criterion result lines and
prints them in the terminal summary, after capture has ended."""

import sys

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    # This file can be imported under two module names ("conftest" by pytest,
    # "tests.conftest" by the tests), each with its own list object, so union
    # the lines from every loaded copy instead of trusting this one.
    lines: list[str] = []
    for mod in list(sys.modules.values()):
        for line in getattr(mod, "ACCEPTANCE_LINES", []):
            if line not in lines:
                lines.append(line)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
