import pytest

_criteria: list[tuple[str, bool, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and rep.when == "call":
        _criteria.append((marker.args[0], rep.passed, getattr(item, "detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _criteria:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name:<28} {detail}")
