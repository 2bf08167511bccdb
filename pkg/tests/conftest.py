import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from csbohm.fields import BoundaryLeakWarning, Grid1D
from csbohm.scenarios import ScenarioConfig, default_config, run_scenario

settings.register_profile(
    "repo",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

# Filled by tests/test_acceptance.py; printed at the end of the run.
ACCEPTANCE: dict = {}


@pytest.fixture
def grid():
    return Grid1D.centered(256, 40.0)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryLeakWarning)
        yield


_REPORTS: dict = {}


@pytest.fixture(scope="session")
def scenario_report():
    """Run a bundled scenario once per session (with artifacts) and cache the report."""

    def get(name, tmp_root=None):
        if name not in _REPORTS:
            import tempfile
            from pathlib import Path

            out = Path(tempfile.mkdtemp(prefix=f"csbohm-{name}-"))
            cfg = ScenarioConfig.from_dict(default_config(name))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                _REPORTS[name] = (run_scenario(cfg, out), out)
        return _REPORTS[name]

    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 14):
        passed, detail = ACCEPTANCE.get(n, (False, "not evaluated (the test errored before recording)"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def rng_state(seed: int):
    return np.random.default_rng(seed)
