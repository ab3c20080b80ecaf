import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import cases  # noqa: E402
from msvol import data_io  # noqa: E402


@pytest.fixture
def golden():
    """Load a frozen record by name."""
    return lambda name: data_io.load_golden(cases.GOLDEN_DIR, name)


def assert_golden(record, computed, inputs=None):
    result = data_io.golden_check(record, computed, inputs)
    assert result.passed, f"{record.name}: {result.failures}"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[n])
