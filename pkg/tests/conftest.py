import pytest

_VERDICTS: dict[int, tuple[bool, str]] = {}


class Criterion:
    """Records one acceptance verdict; the line is printed and kept for the summary."""

    def __init__(self, number: int):
        self.number = number

    def check(self, ok: bool, detail: str) -> None:
        ok = bool(ok)
        _VERDICTS[self.number] = (ok, detail)
        print(f"\nCRITERION {self.number:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, f"criterion {self.number} failed: {detail}"


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        ok, detail = _VERDICTS[k]
        terminalreporter.write_line(f"CRITERION {k:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
