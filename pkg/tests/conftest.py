import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, list[tuple[str, bool, str]]] = {}
_details: dict[str, str] = {}


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the acceptance line of this test."""

    def note(text: str) -> None:
        _details[request.node.nodeid] = text
        print(f"{request.node.name}: {text}")

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    _criteria.setdefault(marker.args[0], []).append(
        (item.name, report.passed, _details.get(item.nodeid, "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        checks = _criteria[n]
        status = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}")
        for name, ok, text in checks:
            terminalreporter.write_line(f"    {'ok  ' if ok else 'FAIL'} {name}{': ' + text if text else ''}")
