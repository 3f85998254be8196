import pytest

from morphfit import synth_model


@pytest.fixture(scope="session")
def model300():
    return synth_model(7, 300)


@pytest.fixture(scope="session")
def model50():
    return synth_model(7, 50)


_VERDICTS = []


def record_verdict(line):
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
