import pytest

from textvin import kernels

BACKENDS = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


def pytest_configure(config):
    config.criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, title = mark.args
    ok, details = item.config.criteria.get(n, (True, []))
    details += [v for k, v in item.user_properties if k == "detail"]
    item.config.criteria[n] = (ok and rep.passed, details)
    item.config.criteria_titles = {**getattr(item.config, "criteria_titles", {}), n: title}


def pytest_terminal_summary(terminalreporter, config):
    if not config.criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(config.criteria):
        ok, details = config.criteria[n]
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {config.criteria_titles[n]}"
        if details:
            line += "  [" + "; ".join(dict.fromkeys(details)) + "]"
        terminalreporter.write_line(line)
