import pytest
from hypothesis import HealthCheck, settings

from semfuzz.broker import BrokerServer, InProcessBroker, RespBroker

settings.register_profile(
    "default",
    deadline=None,
    max_examples=100,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def resp_server():
    server = BrokerServer("127.0.0.1", 0)
    port = server.start()
    yield server, port
    server.stop()


@pytest.fixture(params=["inprocess", "resp"])
def broker(request, resp_server):
    if request.param == "inprocess":
        b = InProcessBroker()
    else:
        b = RespBroker("127.0.0.1", resp_server[1])
    yield b
    b.close()


# acceptance outcomes, keyed by criterion number
_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        passed = report.passed
        prev = _criteria.get(number, (title, True))
        _criteria[number] = (title, prev[1] and passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}")
