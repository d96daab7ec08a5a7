import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or report.failed:
        _RESULTS[key] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), (status, detail) in sorted(_RESULTS.items()):
        line = f"criterion {num:2d} ({name}): {status}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
