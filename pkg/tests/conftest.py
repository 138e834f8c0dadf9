"""Shared test plumbing: the acceptance-criteria summary block.

Acceptance tests register one line per criterion; the lines are printed
in a dedicated section after the run so pass/fail status is visible even
when pytest captures per-test output.
"""

_ACCEPTANCE_LINES: list[tuple[int, str]] = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    _ACCEPTANCE_LINES.append((number, f"criterion {number} [{verdict}] {name}: {detail}"))


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
