import sys
from collections import defaultdict
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> title, and collected (outcome, details) per criterion
_titles: dict[int, str] = {}
_results: dict[int, list[tuple[str, str, list[str]]]] = defaultdict(list)
_item_criterion: dict[str, int] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, title): acceptance criterion this test checks"
    )


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _titles[number] = title
            _item_criterion[item.nodeid] = number


def pytest_runtest_logreport(report):
    number = _item_criterion.get(report.nodeid)
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        outcome = "skipped" if report.skipped else ("passed" if report.passed else "failed")
        details = [v for k, v in report.user_properties if k == "detail"]
        if report.skipped and isinstance(report.longrepr, tuple):
            details.append(report.longrepr[2].removeprefix("Skipped: "))
        _results[number].append((report.nodeid.split("::")[-1], outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_titles):
        checks = _results.get(number, [])
        outcomes = {o for _, o, _ in checks}
        if not checks:
            verdict = "NOT RUN"
        elif "failed" in outcomes:
            verdict = "FAIL"
        elif outcomes == {"skipped"}:
            verdict = "N/A"
        else:
            verdict = "PASS"
        passed = sum(o == "passed" for _, o, _ in checks)
        tr.write_line(f"criterion {number}: {verdict:7s} {_titles[number]} "
                      f"({passed}/{len(checks)} checks passed)")
        for name, outcome, details in checks:
            tr.write_line(f"    {outcome:7s} {name}")
            for d in details:
                tr.write_line(f"            {d}")
