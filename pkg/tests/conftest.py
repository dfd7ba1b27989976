import pytest

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Store one summary line per acceptance criterion; printed at the end of the session."""

    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
