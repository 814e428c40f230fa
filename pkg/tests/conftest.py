import pytest

_CRITERIA = {}


@pytest.fixture(scope="session")
def record_criterion():
    """Record one acceptance criterion outcome for the terminal summary."""

    def record(number, title, passed, detail):
        _CRITERIA[number] = (title, bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}: {detail}")
