import pytest

_CRITERIA: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def criterion(request):
    """``check(ok, detail)`` records the acceptance line for this test and asserts ``ok``."""
    number = request.node.get_closest_marker("criterion").args[0]

    def check(ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line
    return check


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark and report.when == "call" and report.failed and mark.args[0] not in _CRITERIA:
        # crashed before reaching its check
        _CRITERIA[mark.args[0]] = f"criterion {mark.args[0]:>2}: FAIL  {call.excinfo.typename}: {call.excinfo.value}"


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
