import pytest

_LINES: dict = {}


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion for the end-of-run summary."""

    def _record(n: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES[n] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_LINES):
        terminalreporter.write_line(_LINES[n])
