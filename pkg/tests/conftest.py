"""Suite-wide fixtures plus the acceptance-criterion summary reporter.

Tests marked ``@pytest.mark.criterion(n, "label")`` are aggregated and one
PASS/FAIL line per criterion is printed in the terminal summary, regardless
of output capturing.
"""

import pytest

_outcomes: dict[tuple[int, str], list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, label): acceptance criterion this test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        key = (marker.args[0], marker.args[1])
        _outcomes.setdefault(key, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for (num, label), results in sorted(_outcomes.items()):
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {num} [{status}] {label} ({len(results)} check(s))")
