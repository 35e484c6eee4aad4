import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    number, title = mark.args
    status = item.config._criteria.get(number, (title, True))
    item.config._criteria[number] = (title, status[1] and not rep.failed)


def pytest_terminal_summary(terminalreporter, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(config._criteria):
        title, ok = config._criteria[number]
        terminalreporter.write_line(f"criterion {number} {title}: {'PASS' if ok else 'FAIL'}")
