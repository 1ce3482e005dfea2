import pytest

_RESULTS = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        details = ", ".join(f"{k}={v}" for k, v in item.user_properties)
        _RESULTS.append((marker.args[0], marker.args[1], "PASS" if rep.passed else "FAIL", details))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, verdict, details in sorted(_RESULTS, key=lambda r: r[0]):
        line = f"criterion {number:2d} {verdict}  {title}"
        if details:
            line += f"  [{details}]"
        terminalreporter.write_line(line)
