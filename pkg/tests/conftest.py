import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

settings.register_profile("pkg", deadline=None, max_examples=100)
settings.load_profile("pkg")

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def q1():
    from fkburger.params import ModelParams
    return ModelParams.from_q(1.0)


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion."""
    def report(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
