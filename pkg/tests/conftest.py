import numpy as np
import pytest

from abcpass.model import ParameterDef, ParameterSpace, PriorSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_space():
    return ParameterSpace.uniform({"a": (0.0, 1.0)})


@pytest.fixture
def log_space():
    return ParameterSpace((ParameterDef("log10Ne", PriorSpec("log10-uniform", 1.5, 4.5), "log10"),))


# -- acceptance reporting -------------------------------------------------------------------------
#
# Acceptance tests take the ``criterion`` fixture and store a one-line
# measurement in it; after the test a single PASS/FAIL line is written to
# the terminal, outside of output capturing.

_ACCEPTANCE_LINES = []


class Criterion:
    def __init__(self, label):
        self.label = label
        self.detail = ""

    def report(self, detail: str) -> None:
        self.detail = detail


@pytest.fixture
def criterion(request):
    c = Criterion(request.node.get_closest_marker("criterion").args[0])
    request.node._criterion = c
    return c


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported as one PASS/FAIL line")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    c = getattr(item, "_criterion", None)
    if c is None or rep.when != "call":
        return
    status = "PASS" if rep.passed else "FAIL"
    line = f"[criterion {c.label}] {status}: {c.detail}" if c.detail else f"[criterion {c.label}] {status}"
    _ACCEPTANCE_LINES.append(line)
    tr = item.config.pluginmanager.get_plugin("terminalreporter")
    if tr is not None:
        tr.write_line("")
        tr.write_line(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
