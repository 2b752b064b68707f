import numpy as np
import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record ``(number, title, passed, detail)`` for the end-of-run summary."""

    def record(number, title, passed, detail=""):
        _ACCEPTANCE.append((number, title, bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title} ({detail})")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
