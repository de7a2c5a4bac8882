import pytest

_OUTCOMES: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when == "teardown":
        return
    if report.when == "setup" and report.passed:
        return
    n, title = mark.args
    _, failed = _OUTCOMES.get(n, (title, []))
    if not report.passed:
        failed.append(item.name)
    _OUTCOMES[n] = (title, failed)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        title, failed = _OUTCOMES[n]
        status = "FAIL" if failed else "PASS"
        extra = f"  ({', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title}{extra}")
