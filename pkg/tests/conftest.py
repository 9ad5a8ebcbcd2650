"""Collects the outcome of every acceptance criterion and prints one line per criterion."""

import pytest

_RESULTS: dict[str, list] = {}


@pytest.fixture
def measured(request):
    """Append a short measurement note to the criterion's summary line."""
    notes = []
    request.node._criterion_notes = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    name = marker.args[0]
    if rep.when == "setup" and rep.passed:
        return
    notes = getattr(item, "_criterion_notes", [])
    _RESULTS[name] = ["PASS" if rep.passed else "FAIL", "; ".join(notes)]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, notes) in _RESULTS.items():
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{notes}]" if notes else ""))
