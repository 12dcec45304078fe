from pathlib import Path

import pytest

from hammersim import Geometry

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def configs_dir():
    return CONFIGS


@pytest.fixture
def small_geometry():
    return Geometry(banks=2, rows_per_bank=8, row_size_bits=8192)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): numbered acceptance criterion")
    config._acceptance = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marks = getattr(report, "acceptance", None)
    if marks is None:
        return
    n, title = marks
    results = report.config_acceptance
    results[n] = (title, report.passed and results.get(n, (title, True))[1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        rep.acceptance = tuple(mark.args)
        rep.config_acceptance = item.config._acceptance


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
