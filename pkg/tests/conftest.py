import numpy as np
import pytest

from sysrisk.config import default_config_path, load_config
from sysrisk.scenario import RiskFactorModel, sample
from sysrisk.utility import AcceptanceLevel, UtilityParams

_CRITERIA: dict = {}


def record(number: int, name: str, passed: bool, detail: str = ""):
    """Register the outcome of one acceptance criterion (printed at session end)."""
    _CRITERIA[number] = (name, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        name, ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")


@pytest.fixture(scope="session")
def default_cfg():
    return load_config(default_config_path())


@pytest.fixture
def small_problem():
    rng = np.random.default_rng(7)
    n = 3
    model = RiskFactorModel.equicorrelated(rng.uniform(0.5, 2.0, n), 0.8, 0.4)
    params = UtilityParams(rng.uniform(0.5, 1.5, n))
    return sample(model, 400, 11), params, AcceptanceLevel(-2.0)
