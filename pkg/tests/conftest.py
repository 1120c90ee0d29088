import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

_CRITERION_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_acceptance_results = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    match = _CRITERION_PATTERN.search(report.nodeid)
    if match:
        _acceptance_results[int(match.group(1))] = (match.group(2), report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_acceptance_results):
        name, outcome = _acceptance_results[num]
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(
            f"criterion {num} ({name.replace('_', ' ')}): {status}")
