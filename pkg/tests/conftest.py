"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

import pytest

_outcomes: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        detail = "; ".join(v for k, v in item.user_properties if k == "detail")
        _outcomes[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        title, status, detail = _outcomes[number]
        terminalreporter.write_line(f"[{status}] {number}. {title}" + (f" | {detail}" if detail else ""))
