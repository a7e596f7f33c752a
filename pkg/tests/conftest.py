import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# acceptance results, printed once at the end of the session
CRITERIA: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}")


@pytest.fixture
def law():
    from wdmpon import PacketLaw

    return PacketLaw.deterministic(8e-6)
