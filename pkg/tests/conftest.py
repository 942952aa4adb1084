from __future__ import annotations

import pytest

_REPORT: list[str] = []


@pytest.fixture
def report():
    """Record a one-line acceptance verdict shown in the terminal summary."""

    def add(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        _REPORT.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
