import pytest

_RANK = {"passed": 0, "skipped": 1, "failed": 2}
_outcomes: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    prev = _outcomes.get(number, (title, "passed"))[1]
    state = report.outcome if _RANK[report.outcome] >= _RANK[prev] else prev
    _outcomes[number] = (title, state)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        title, state = _outcomes[number]
        label = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[state]
        terminalreporter.write_line(f"criterion {number:>2}  {label}  {title}")
