import pytest

from powerwall_rl.data import generate_synthetic, split

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def series():
    return generate_synthetic(42)


@pytest.fixture(scope="session")
def data_split(series):
    return split(series)


@pytest.fixture
def record_criterion():
    """Collects acceptance outcomes for the end-of-run summary."""
    def record(name: str, passed: bool, detail: str = "") -> None:
        _CRITERIA.append((name, bool(passed), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
