"""Shared pytest plumbing.

Echoes the per-criterion verdict lines collected by the acceptance module
into the terminal summary, so they are visible even though pytest captures
stdout of passing tests.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    for name, mod in list(sys.modules.items()):
        if name.rpartition(".")[2] == "test_acceptance":
            lines = getattr(mod, "CRITERION_LINES", None)
            if lines:
                terminalreporter.section("acceptance criteria")
                for line in sorted(lines):
                    terminalreporter.write_line(line)
            return
