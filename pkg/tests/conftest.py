import warnings

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_coupling_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="coupling constant .* exceeds")
        yield


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def report(request):
    """Write PASS/FAIL lines live and keep them for the end-of-run summary."""
    config = request.config
    term = config.pluginmanager.get_plugin("terminalreporter")

    def emit(line):
        config.acceptance_lines.append(line)
        if term is not None:
            term.write_line(line)
        else:
            print(line)

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
