"""Per-criterion PASS/FAIL summary for the acceptance suite."""
import pytest

_OUTCOMES: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name, soft=False): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    name = mark.args[0]
    soft = mark.kwargs.get("soft", False)
    entry = _OUTCOMES.setdefault(name, [soft, "PASS", ""])
    if rep.when == "call" and rep.skipped or rep.when == "setup" and rep.skipped:
        if entry[1] == "PASS":
            entry[1] = "SKIP"
            entry[2] = str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else ""
    elif rep.failed:
        entry[1] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, (soft, status, note) in _OUTCOMES.items():
        tag = " (soft)" if soft else ""
        extra = f" - {note}" if note else ""
        tr.write_line(f"{status} {name}{tag}{extra}")
