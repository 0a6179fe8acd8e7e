from __future__ import annotations

import re

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    k = int(m.group(1))
    failed = report.failed
    if report.when == "call" or failed:
        prev = _CRITERIA.get(k, (m.group(2), "PASS"))[1]
        _CRITERIA[k] = (m.group(2), "FAIL" if failed or prev == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        name, verdict = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d} {name.replace('_', ' '):40s} {verdict}")
