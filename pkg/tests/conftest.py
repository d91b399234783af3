from pathlib import Path

import pytest

from artifact.bootstrap_engine import CountTable

DATA = Path(__file__).parent / "data"
LUNG_IDS = (37, 57, 62, 67)


def lung_table(cid: int) -> CountTable:
    """Reference cluster-appearance counts for one lung-data cluster (B = 10^4, 13 scales)."""
    return CountTable.from_tsv((DATA / f"lung_{cid}.tsv").read_text())


@pytest.fixture(scope="session")
def lung_counts():
    return {cid: lung_table(cid) for cid in LUNG_IDS}


# acceptance criteria report one PASS/FAIL line each at the end of the run
_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[mark.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
