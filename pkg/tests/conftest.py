"""Shared pytest hooks: a per-criterion pass/fail summary for the acceptance suite.

Acceptance tests are named ``test_c<N>_...``; a criterion passes when every
test carrying its number passed. Tests may attach a short measurement line
with :func:`note`.
"""

import re

CRITERIA = {
    1: "gradient suite",
    2: "architecture invariants",
    3: "shifted-window correctness",
    4: "loss and metric identities",
    5: "synthetic domain-generalisation experiment",
    6: "LBP baseline sanity",
    7: "pipeline determinism",
    8: "t-SNE of extracted features",
    9: "augmentation accounting",
}
OUTCOMES = {}
NOTES = {}
_NAME = re.compile(r"test_acceptance\.py::test_c(\d+)_")


def note(n: int, text: str) -> None:
    NOTES.setdefault(n, []).append(text)


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.failed:
        OUTCOMES.setdefault(n, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        results = OUTCOMES.get(n)
        status = "NOT RUN" if not results else ("PASS" if all(results) else "FAIL")
        detail = "; ".join(NOTES.get(n, []))
        terminalreporter.write_line(f"criterion {n} ({name}): {status}" + (f"  [{detail}]" if detail else ""))
