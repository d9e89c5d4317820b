import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gazesom.data import make_synthetic_suite  # noqa: E402


@pytest.fixture(scope="session")
def small_bench(tmp_path_factory):
    """Twenty synthetic questions shared by the evaluator and CLI tests (read-only)."""
    return make_synthetic_suite(20, 5, tmp_path_factory.mktemp("bench20"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(results):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
