import pytest


@pytest.fixture(scope="session")
def verdicts(request):
    """Collect one acceptance line per criterion for the terminal summary."""
    log = []
    request.config._acceptance_lines = log
    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
