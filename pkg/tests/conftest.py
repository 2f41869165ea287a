import pytest

_ACCEPTANCE: list = []


class Recorder:
    def __call__(self, criterion: int, passed: bool, detail: str) -> bool:
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append((criterion, line))
        print(line, flush=True)
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE, key=lambda e: e[0]):
        terminalreporter.write_line(line)
