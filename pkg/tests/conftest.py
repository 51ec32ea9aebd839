import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# criterion number -> {"title", "outcomes", "details"}
_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            number, title = mark.args
            _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "details": []})


def pytest_runtest_logreport(report):
    number = _criterion_of(report)
    if number is None:
        return
    entry = _CRITERIA[number]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry["outcomes"].append("skipped" if report.skipped else report.outcome)
        entry["details"].extend(v for k, v in report.user_properties if k == "detail")


def _criterion_of(report):
    for number in _CRITERIA:
        if f"criterion_{number:02d}" in report.nodeid:
            return number
    return None


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outcomes = entry["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {entry['title']}" + (f"  ({detail})" if detail else ""))


@pytest.fixture
def detail(record_property):
    """Attach a short measured-value note to the criterion's summary line."""
    def note(text: str) -> None:
        record_property("detail", text)
    return note
