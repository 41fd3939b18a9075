import numpy as np
import pytest

from sphereflow._kernels import available_backends
from sphereflow.cli import build_config
from sphereflow.flow import run
from sphereflow.sphere import build_grid

_acceptance = {}
_runs = {}


def run_preset(name, **overrides):
    """Run a built-in scenario once per session; returns (config, grid, f, u0, result)."""
    key = (name, tuple(sorted(overrides.items())))
    if key not in _runs:
        config = build_config(dict(preset=name, **overrides), name=name)
        grid = build_grid(config.n, config.N)
        f = config.f_profile(grid)
        u0 = config.u0_profile(grid)
        _runs[key] = (config, grid, f, u0, run(u0, f, config.params, grid, keep_states=True))
    return _runs[key]


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _acceptance.get(crit[0], (crit[1], "PASS"))[1]
        status = "PASS" if report.outcome == "passed" and prev == "PASS" else "FAIL"
        _acceptance[crit[0]] = (crit[1], status)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is not None and mark.args:
        rep.criterion = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_acceptance):
        title, status = _acceptance[num]
        terminalreporter.write_line(f"criterion {num:2d} {title}: {status}")
