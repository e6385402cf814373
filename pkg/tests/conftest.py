import sys
from pathlib import Path

import pytest

from robust_timetabling.milp import Recheck

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def recheck_incumbents():
    """Every incumbent returned by the MILP layer during a test must re-verify."""
    with Recheck(tol=1e-6) as rc:
        yield rc
    assert not rc.failures, rc.failures[:5]


ACCEPTANCE_LINES: dict[int, str] = {}


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
