import pytest

_LINES: list = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one summary line per acceptance criterion."""

    def log(label: str, passed: bool, detail: str) -> bool:
        _LINES.append(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
        return passed

    return log


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
