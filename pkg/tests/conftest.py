import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from freqmask.tables import FinestTable  # noqa: E402

# Selected cells for (L3, gender, edu) = (010101, 2, 2): (age, true, masked)
EXAMPLE_GROUP = [
    (1, 36, 36), (2, 284, 284), (3, 262, 262), (4, 1, 5), (5, 1, 5), (6, 2, 5),
    (7, 1, 5), (8, 1, 0), (9, 10, 10), (10, 9, 9), (11, 79, 79), (12, 124, 124),
    (13, 130, 130), (14, 106, 106), (15, 125, 125), (16, 77, 77), (17, 60, 60),
    (18, 18, 18),
]

# A few neighbouring cells so the table is not just the one group.
OTHER_ROWS = [
    ("01", "0101", "010101", "1", "1", "1", 438, 438),
    ("01", "0101", "010101", "1", "1", "2", 164, 164),
    ("01", "0105", "010512", "2", "9", "16", 1, 5),
    ("01", "0105", "010512", "2", "9", "17", 3, 0),
    ("01", "0105", "010512", "2", "9", "18", 5, 5),
    ("01", "0105", "010512", "2", "2", "4", 2, 0),
]


def example_rows():
    rows = [("01", "0101", "010101", "2", "2", str(age), t, m) for age, t, m in EXAMPLE_GROUP]
    return rows + OTHER_ROWS


@pytest.fixture
def example_table() -> FinestTable:
    return FinestTable.from_rows(
        hierarchy=("L1", "L2", "L3"), keys=("gender", "edu", "age"), rows=example_rows(), k=5, seed=0
    )


_acceptance = []


def pytest_runtest_logreport(report):
    if "acceptance" not in report.keywords:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
