import pytest

# acceptance verdict lines, filled by tests/test_acceptance.py
VERDICTS = {}


def record(number, passed, detail):
    VERDICTS[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(VERDICTS[number])


@pytest.fixture
def verdict():
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
