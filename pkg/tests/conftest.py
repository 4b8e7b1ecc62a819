import pytest

from surrogate_kit.isa import BlockGenConfig, random_blocks


def pytest_configure(config):
    config._criteria = {}


@pytest.fixture
def record_criterion(request):
    """Store a one-line pass/fail verdict for the acceptance summary."""

    def record(number: int, title: str, passed: bool, detail: str = ""):
        request.config._criteria[number] = (title, passed, detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = getattr(config, "_criteria", {})
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(rows):
        title, passed, detail = rows[n]
        line = f"criterion {n:2d}  {'PASS' if passed else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_blocks():
    return random_blocks(200, BlockGenConfig(1, 8, seed=11))
