import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from provgate.timefmt import utc  # noqa: E402

SAMPLE_POLICY = """
<policy ID="1" >
<target>
<subject> Actor.ID </subject>
<record>Operation.description</record>
<restriction>Actor.role=="AuthorizedUser"</restriction>
</target>
<condition> system.machineid == "192.168.2.35" </condition>

<effect> Permit </effect>
<obligation>
<temporal constraint> 10 days </temporal constraint>
</obligation>
</policy>
"""

_criteria: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _criteria[number] = (title, report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        title, passed = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}")


@pytest.fixture
def sample_policy_text():
    return SAMPLE_POLICY


@pytest.fixture
def t0():
    return utc(2024, 3, 1, 12, 0, 0)
