import pytest

from cropsight.classes import CLASS_CODES
from cropsight.records import PredictionRecord

ACCEPTANCE_FILE = "test_acceptance.py"


def one_hotish(true_class, predicted, peak=0.6):
    k = len(CLASS_CODES)
    p = [(1 - peak) / (k - 1)] * k
    p[CLASS_CODES.index(predicted)] = peak
    return tuple(p)


@pytest.fixture
def make_record():
    def make(pid, true_class, predicted=None, peak=0.6, **kw):
        return PredictionRecord(pid, true_class, one_hotish(true_class, predicted or true_class, peak), **kw)
    return make


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if ACCEPTANCE_FILE not in nodeid or getattr(rep, "when", "call") != "call":
                continue
            lines.append((nodeid.split("::")[-1], outcome))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(lines):
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
