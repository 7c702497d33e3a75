import os
import sys
from collections import defaultdict

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> {"title", "budget", "outcomes", "seconds"}
_CRITERIA = defaultdict(lambda: {"title": "", "budget": None, "outcomes": [], "seconds": 0.0})


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, title, budget=None): acceptance criterion a test belongs to; "
                   "budget is the wall-clock limit in seconds for all its tests")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args[:2]
    entry = _CRITERIA[number]
    entry["title"] = title
    entry["budget"] = mark.kwargs.get("budget", entry["budget"])
    entry["seconds"] += call.duration
    if call.when == "call" or call.excinfo is not None:
        entry["outcomes"].append(call.excinfo is None)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        ok = bool(entry["outcomes"]) and all(entry["outcomes"])
        budget = entry["budget"]
        timing = f"{entry['seconds']:.1f}s"
        if budget is not None:
            timing += f" / {budget:.0f}s"
            ok = ok and entry["seconds"] <= budget
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  "
                                    f"{entry['title']}  ({timing})")
