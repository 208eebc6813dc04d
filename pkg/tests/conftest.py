import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the lines are printed again in the terminal summary."""

    def record(num, name, ok, detail=""):
        line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        _LINES.append((num, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
