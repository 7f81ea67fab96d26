import os

import pytest

ACCEPTANCE_LINES = []


def record(name, passed, detail=""):
    """Log one criterion line; ``passed=None`` marks an opt-in criterion that was not run."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"[{status}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def extended_enabled():
    return os.environ.get("OPTOMECH_EXTENDED", "") not in ("", "0")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance():
    return record
