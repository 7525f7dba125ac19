import pytest

from globaltest.experiments import default_learned_direction

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}
N_CRITERIA = 10


@pytest.fixture(scope="session")
def learned_direction():
    """Direction from the default sinusoid discovery setup (about 9 s, computed once)."""
    return default_learned_direction()


@pytest.fixture
def criterion():
    """``check(n, ok, detail)`` records the outcome of acceptance criterion ``n`` and asserts it."""

    def check(n: int, ok: bool, detail: str):
        ACCEPTANCE[n] = (bool(ok), detail)
        assert ok, f"criterion {n} failed: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not any(i.nodeid.startswith("tests/test_acceptance.py") for i in
               terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", [])):
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        ok, detail = ACCEPTANCE.get(n, (False, "not reached"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
