import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def check(name: str, ok: bool, detail: str) -> None:
        line = f"{name:<8} {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
