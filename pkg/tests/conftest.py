import pytest

_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """``criterion(num, title, ok, detail)`` records one acceptance line and returns ``ok``."""
    def record(num, title, ok, detail=""):
        _ACCEPTANCE.append((num, title, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(_ACCEPTANCE):
        mark = "PASS" if ok else "FAIL"
        terminalreporter.line(f"[{mark}] criterion {num:>2}: {title}" + (f" ({detail})" if detail else ""))
