import numpy as np
import pytest

from qparctl.pde_core import Grid, build_diffusion_spec

ACCEPTANCE_FILE = "test_acceptance.py"


@pytest.fixture(scope="session")
def spec_one():
    return build_diffusion_spec(lambda s: np.ones_like(s), lambda s: np.zeros_like(s))


@pytest.fixture(scope="session")
def spec_sine():
    return build_diffusion_spec(lambda s: 2.0 + np.sin(s), np.cos)


def sine_profile(grid: Grid, amplitude=1.0, mode=1):
    y = amplitude * np.sin(mode * np.pi * grid.x)
    y[0] = y[-1] = 0.0
    return y


_RESULTS = {}


def pytest_runtest_logreport(report):
    """Remember one outcome per acceptance criterion (test names start with test_A<n>_)."""
    if ACCEPTANCE_FILE not in report.nodeid:
        return
    if report.when != "call" and not report.failed:
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_A"):
        return
    key = name[len("test_"):].split("_")[0]
    detail = dict(report.user_properties).get("detail", "")
    _RESULTS[key] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=lambda k: int(k[1:])):
        outcome, detail = _RESULTS[key]
        terminalreporter.write_line(f"{key} {outcome} {detail}".rstrip())
