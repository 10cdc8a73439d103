from __future__ import annotations

import numpy as np
import pytest

from gridsynth import fixtures as fx
from gridsynth import load_synthesis as ls

_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture(scope="session")
def ensembles() -> dict[str, ls.FourierEnsemble]:
    """Tuned ensembles for both fixture countries, each fitted from four constructed years."""
    return {c: ls.prepare_ensemble(fx.historical_years(c), c) for c in fx.COUNTRIES}


@pytest.fixture(scope="session")
def reference_net():
    return fx.reference_grid()


@pytest.fixture(scope="session")
def reference_nuclear(reference_net):
    return fx.nuclear_table(reference_net)


@pytest.fixture(scope="session")
def reference_loads(ensembles, reference_net, reference_nuclear):
    targets = fx.country_targets(reference_net, reference_nuclear, {"AA": 1.0, "BB": -1.0})
    return ls.disaggregate(ensembles, reference_net, targets, seed=1)


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """Config and output directory of one full run on the demo inputs."""
    from gridsynth import pipeline

    cfg = pipeline.load_config(fx.write_demo_inputs(tmp_path_factory.mktemp("demo")))
    return cfg, pipeline.run_generate(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[1][1:])):
        terminalreporter.write_line(f"{name}: {'PASS' if _ACCEPTANCE[name] == 'passed' else 'FAIL'}")
