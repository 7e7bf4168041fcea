import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; printed in the terminal summary."""

    def _report(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
