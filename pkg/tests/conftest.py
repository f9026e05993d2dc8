import pytest

from smdsim.chip import Geometry
from smdsim.experiment import ExperimentConfig, FrontendParams
from smdsim.timing import TimingParams


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


_outcomes: dict[str, list[bool]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    m = [k for k in report.keywords if k.startswith("criterion_")]
    for k in m:
        _outcomes.setdefault(k[len("criterion_"):], []).append(report.passed)


def pytest_collection_modifyitems(items):
    for item in items:
        for mark in item.iter_markers("criterion"):
            item.keywords[f"criterion_{mark.args[0]}"] = True


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_outcomes, key=lambda s: (int("".join(c for c in s if c.isdigit()) or 0), s)):
        ok = all(_outcomes[key])
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} ({len(_outcomes[key])} checks)")


@pytest.fixture
def small_cfg():
    """A fast single-core configuration on the scaled geometry."""
    def make(mode="smd-fr", trace="gen:random:n=3000", instructions=6000, period_ms=None, **kw):
        timing = TimingParams() if period_ms is None else TimingParams().with_refresh_period(period_ms)
        return ExperimentConfig(mode=mode, geometry=Geometry.scaled(), timing=timing, traces=(trace,),
                                frontend=FrontendParams(instructions=instructions, warmup=0), **kw).validate()
    return make
