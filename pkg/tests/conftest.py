"""Shared fixtures: collects acceptance verdicts for the terminal summary."""

import pytest

_verdicts: list[str] = []


@pytest.fixture
def criterion_report():
    """Callable recording one PASS/FAIL line per release criterion."""

    def record(num: int, label: str, ok: bool) -> None:
        verdict = "PASS" if ok else "FAIL"
        _verdicts.append(f"criterion {num}: {verdict} - {label}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
