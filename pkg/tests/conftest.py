import numpy as np
import pytest

from iampc.invariant_sets import build_set_suite
from iampc.lyapunov_design import solve_design
from iampc.model import EXAMPLE_GAIN, example_model
from iampc.simulator import Artifacts


@pytest.fixture(scope="session")
def model():
    return example_model()


@pytest.fixture(scope="session")
def design_default(model):
    """Largest-margin design at Q = I, R = 1."""
    return solve_design(model)


@pytest.fixture(scope="session")
def design_gain(model):
    """Design restricted to the certified gain that gives horizon 8."""
    return solve_design(model, gain=EXAMPLE_GAIN)


@pytest.fixture(scope="session")
def suite_default(model, design_default):
    return build_set_suite(model, design_default)


@pytest.fixture(scope="session")
def suite_gain(model, design_gain):
    return build_set_suite(model, design_gain)


@pytest.fixture(scope="session")
def artifacts(model, design_gain, suite_gain):
    return Artifacts(model, design_gain, suite_gain)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance lines collected by ``test_acceptance``."""
    import sys

    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted((k for k in report if isinstance(k, int))):
        passed, detail = report[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
