import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import re

_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m or (report.when != "call" and report.passed):
        return
    entry = _CRITERIA.setdefault(int(m.group(1)), {"ok": True, "notes": []})
    entry["ok"] &= report.passed
    entry["notes"] += [ln for ln in report.capstdout.splitlines() if ln.startswith("[")]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if entry['ok'] else 'FAIL'}")
        for note in entry["notes"]:
            terminalreporter.write_line(f"    {note}")
