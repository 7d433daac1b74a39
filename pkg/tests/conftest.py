import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance check.

    Lines are printed immediately (visible on failure) and repeated in a
    terminal summary section so a full run always shows every verdict.
    """

    def _record(name, ok, detail=""):
        tag = "PASS" if ok else "FAIL"
        line = f"[{tag}] {name}" + (f" | {detail}" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checks")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.line(line)
