import pytest

# (criterion number, description, passed, detail) collected by the acceptance suite.
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def check(number: int, description: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE_RESULTS.append((number, description, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} criterion {number}: {description} {detail}")
        assert passed, f"criterion {number} failed: {description} {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{number:2d}] {description}: {detail}")
