import os

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FULL_SCALE = os.environ.get("FMFCAP_FULL_SCALE") == "1"

# filled by tests/test_acceptance.py, one line per criterion
CRITERIA_LINES: dict = {}


def record_criterion(number: int, ok: bool, detail: str):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA_LINES[number] = line
    print(line)
    return ok


def skip_criterion(number: int, why: str):
    CRITERIA_LINES[number] = f"criterion {number:2d}: SKIP  {why}"
    pytest.skip(why)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA_LINES):
            terminalreporter.write_line(CRITERIA_LINES[n])
