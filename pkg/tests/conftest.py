import pytest

RESULTS = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records a pass/fail line and asserts ``ok``."""
    def record(n, ok, detail):
        RESULTS[n] = (bool(ok), detail)
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
