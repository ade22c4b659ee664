import pytest

_criteria = {}


def _record(item, passed):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "passed": True, "details": []})
    entry["passed"] &= passed
    entry["details"].extend(v for k, v in item.user_properties if k == "detail")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _record(item, rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {entry['title']}")
        for detail in entry["details"]:
            terminalreporter.write_line(f"    {detail}")
