"""Shared acceptance reporting: one PASS/FAIL line per criterion."""

_CRITERIA: dict[int, tuple[bool, str]] = {}

import pytest


@pytest.fixture
def criterion():
    """Record (number, ok, detail) for the end-of-run summary."""

    def record(num: int, ok: bool, detail: str) -> None:
        _CRITERIA[num] = (bool(ok), detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    del exitstatus, config
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        ok, detail = _CRITERIA[num]
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"C{num:02d} {verdict} - {detail}")
