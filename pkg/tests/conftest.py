"""Shared pytest hooks for the test suite."""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # Replay the acceptance checklist after the run so the verdict lines
    # appear even though pytest captures the stdout of passing tests.
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None) if mod is not None else None
    if verdicts:
        terminalreporter.section("acceptance checklist")
        for line in verdicts:
            terminalreporter.write_line(line)
