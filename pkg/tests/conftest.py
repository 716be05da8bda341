"""Prints one pass/fail line per acceptance criterion at the end of the run."""

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")
_titles: dict[str, str] = {}
_outcomes: dict[str, tuple[str, str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = _CRITERION.search(item.nodeid)
        if m:
            doc = (item.function.__doc__ or "").strip().splitlines()
            _titles[m.group(1)] = doc[0] if doc else item.name


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or report.outcome != "passed":
        detail = "; ".join(str(v) for k, v in report.user_properties if k == "measured")
        # a failed setup or teardown overrides a passed call
        if report.when == "call" or m.group(1) not in _outcomes or report.outcome == "failed":
            _outcomes[m.group(1)] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _titles:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_titles, key=int):
        outcome, detail = _outcomes.get(num, ("not run", ""))
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        line = f"criterion {num}: {status}  {_titles[num]}"
        tr.write_line(line + (f"  [{detail}]" if detail else ""))
