"""Suite-wide bookkeeping.

Every Imdp and Pimdp constructed anywhere in the run is audited for interval
validity as it is created, and the acceptance tests record one verdict per
criterion; both are reported in the terminal summary.
"""
import math

import numpy as np
import pytest

from safelearn.abstraction import FEASIBILITY_TOL, Imdp
from safelearn.model import Pimdp

AUDIT = {"models": 0, "rows": 0, "violations": []}
VERDICTS: dict[int, tuple[bool, str]] = {}


def row_violation(row):
    if np.any(row.lo < 0) or np.any(row.lo > row.hi) or np.any(row.hi > 1):
        return "bounds out of order"
    if math.fsum(row.lo) > 1 + FEASIBILITY_TOL:
        return "lower bounds sum above 1"
    if math.fsum(row.hi) < 1 - FEASIBILITY_TOL:
        return "upper bounds sum below 1"
    return None


def _audited(cls):
    original = cls.__init__

    def init(self, *args, **kwargs):
        original(self, *args, **kwargs)
        AUDIT["models"] += 1
        for key, row in self.rows.items():
            AUDIT["rows"] += 1
            problem = row_violation(row)
            if problem:
                AUDIT["violations"].append(f"{cls.__name__} row {key}: {problem}")

    cls.__init__ = init


_audited(Imdp)
_audited(Pimdp)


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    tr.section("interval audit")
    bad = AUDIT["violations"]
    tr.write_line(f"{AUDIT['models']} models, {AUDIT['rows']} rows, {len(bad)} violations")
    for line in bad[:20]:
        tr.write_line(f"  {line}")
    if VERDICTS:
        tr.section("acceptance criteria")
        for k in sorted(VERDICTS):
            ok, detail = VERDICTS[k]
            tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_sessionfinish(session, exitstatus):
    if AUDIT["violations"] and exitstatus == 0:
        session.exitstatus = 1


@pytest.fixture
def verdict(request):
    """Record a PASS/FAIL line for the criterion number given by the test's marker."""
    number = request.node.get_closest_marker("criterion").args[0]
    notes = []
    yield notes
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    VERDICTS[number] = (ok, "; ".join(notes))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep
