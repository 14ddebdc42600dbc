"""Collects acceptance verdicts and prints one line per criterion after the run."""

import pytest

_VERDICTS: dict[int, tuple[str, str]] = {}


@pytest.fixture
def verdict():
    """``verdict(n, passed, detail)`` records criterion ``n``; call it before asserting."""

    def record(number: int, passed: bool | None, detail: str) -> None:
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        _VERDICTS[number] = (status, detail)
        print(f"criterion {number}: {status}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_VERDICTS):
        status, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
