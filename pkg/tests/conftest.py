import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest


@pytest.fixture(scope="session")
def beta0_bracket():
    from bigelfand.radial import find_beta0

    return find_beta0(5, tol=1e-6)


_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when != "call" and not (report.failed or report.skipped):
        return
    num = int(name.split("_")[2])
    if hasattr(report, "wasxfail"):
        state = "xfail"
    else:
        state = report.outcome
    _CRITERIA.setdefault(num, []).append((name, state))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        states = _CRITERIA[num]
        bad = [n for n, s in states if s != "passed"]
        verdict = "PASS" if not bad else "FAIL"
        note = "" if not bad else "  (" + ", ".join(f"{n}: {s}" for n, s in states if s != "passed") + ")"
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  [{len(states) - len(bad)}/{len(states)} parts]{note}")
