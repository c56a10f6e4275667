"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import re

_RESULTS: dict[int, tuple[str, bool]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    n, name = int(m.group(1)), m.group(2).replace("_", " ")
    ok = report.passed if report.when == "call" else not report.failed
    prev = _RESULTS.get(n, (name, True))
    _RESULTS[n] = (name, prev[1] and ok and not report.skipped)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        name, ok = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {name}")
