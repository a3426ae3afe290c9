"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

import pytest

ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def verdict():
    """``verdict(criterion, passed, detail)`` records a line and echoes it to the captured output."""
    def record(criterion: int, passed: bool, detail: str) -> None:
        ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'} - {detail}")
