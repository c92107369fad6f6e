import pytest

from fiberforge.synthdata import generate_dataset, split_dataset

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def golden_split():
    """seed 42, 200 records per cell, 479 model / 721 holdout."""
    return split_dataset(generate_dataset(200, 42), 479, 42)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
