import numpy as np
import pytest

from pcapri import phantom


@pytest.fixture(scope="session")
def ph64():
    return phantom.generate(phantom.default_spec((64, 64, 64)), seed=0)


@pytest.fixture(scope="session")
def ph32():
    return phantom.generate(phantom.default_spec((32, 32, 32)), seed=0)


@pytest.fixture(scope="session")
def ph24():
    return phantom.generate(phantom.default_spec((24, 24, 24)), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- per-criterion summary for the acceptance suite -------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not (rep.when == "setup" and not rep.passed)):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "states": [], "details": []})
    entry["states"].append("SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL"))
    entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        states = e["states"]
        if "FAIL" in states:
            state = "FAIL"
        elif all(s == "SKIP" for s in states):
            state = "SKIP"
        else:
            state = "PASS"
        line = f"criterion {n:>2} {state}  {e['title']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        tr.write_line(line)
