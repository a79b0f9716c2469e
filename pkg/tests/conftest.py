"""Shared pytest hooks: acceptance criteria report one PASS/FAIL line each."""
import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records and prints the line for criterion ``n``."""
    def report(n: int, ok: bool, detail: str):
        line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
