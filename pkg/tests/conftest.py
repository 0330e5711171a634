"""Shared test plumbing: the acceptance-criteria scoreboard.

Acceptance tests record one verdict line each; the summary hook prints the
scoreboard after the normal pytest output so a full run ends with an explicit
pass/fail line per criterion, including the measured numbers.
"""

import pytest

ACCEPTANCE_LINES = []  # (criterion number, verdict line)


@pytest.fixture
def criterion():
    """Record a criterion verdict on the scoreboard, then assert it."""

    def record(num: int, title: str, ok: bool, detail: str):
        mark = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append(
            (num, f"[{mark}] criterion {num:>2}  {title}: {detail}"))
        assert ok, f"criterion {num} ({title}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
