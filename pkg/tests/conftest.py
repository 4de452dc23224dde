import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from torus_sns.spectral import mode_set  # noqa: E402


@pytest.fixture
def ms2():
    return mode_set(2)


@pytest.fixture
def ms3():
    return mode_set(3)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line, printed in the summary."""

    def record(n, ok, detail=""):
        _CRITERIA[n] = (bool(ok), detail)
        print(f"criterion {str(n):>3}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {str(n):>3}: {'PASS' if ok else 'FAIL'}  {detail}")
