import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        number, title = mark.args
        measured = dict(item.user_properties).get("measured", "")
        _CRITERIA[number] = (title, rep.outcome, rep.duration, measured)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome, duration, measured = _CRITERIA[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {number}: {verdict}  {title}  ({duration:.1f} s)"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)
