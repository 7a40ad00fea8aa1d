import pytest

_VERDICTS: list[str] = []


class Verdict:
    """Records one acceptance line and fails the test when the check fails."""

    def __call__(self, number: int, name: str, passed: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        _VERDICTS.append(line)
        print(line)
        assert passed, line


@pytest.fixture
def verdict():
    return Verdict()


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
