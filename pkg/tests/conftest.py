import pytest

_CRITERIA: dict[str, str] = {}


@pytest.fixture
def report():
    """Record the one-line outcome of an acceptance criterion for the terminal summary."""

    def record(number, passed: bool, text: str, seconds: float | None = None):
        took = f" ({seconds:.1f} s)" if seconds is not None else ""
        line = f"criterion {number:<3} {'PASS' if passed else 'FAIL'}  {text}{took}"
        _CRITERIA[str(number)] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(k.rstrip("ab")), k)):
        terminalreporter.write_line(_CRITERIA[key])
