import pytest

from _support import chain5

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def chain5_topo():
    return chain5()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
