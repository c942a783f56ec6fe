"""Shared fixtures: the case-study surface, scenario models and shipped designs."""

import numpy as np
import pytest

from meddesign.criteria import criterion_config
from meddesign.designs import tabulated_design
from meddesign.models import DesignRegion, MonoModel, SurfaceModel
from meddesign.simulation import case_study_model, emax_pair_model

CASE_REGION = DesignRegion(20.0, 7.0)
SQUARE_REGION = DesignRegion(10.0, 12.0)
TABLE2_NAMES = (
    "ray4_2", "ray4_4", "factorial4x4", "original", "d_optimal", "med_10_50", "med_20_80",
)


@pytest.fixture(scope="session")
def case_model():
    return case_study_model()


@pytest.fixture(scope="session")
def emax_model():
    return emax_pair_model(0.02)


@pytest.fixture(scope="session")
def sigmoid_scenario_model():
    return SurfaceModel(
        0.0,
        MonoModel("sigmoid_emax", (80.0, 3.0, 1.5)),
        MonoModel("emax", (120.0, 10.0)),
        -0.02,
    )


@pytest.fixture(scope="session")
def case_designs():
    return {name: tabulated_design("case_study", name) for name in TABLE2_NAMES}


@pytest.fixture(scope="session")
def case_cfg_10_50(case_model):
    return criterion_config(case_model, CASE_REGION, (10, 50))


@pytest.fixture(scope="session")
def case_cfg_20_80(case_model):
    return criterion_config(case_model, CASE_REGION, (20, 80))


@pytest.fixture(scope="session")
def emax_cfg(emax_model):
    return criterion_config(emax_model, SQUARE_REGION, (80, 90))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def optimized_10_50(case_model, case_cfg_10_50):
    """Swarm-optimized MED(10,50) design for the case study (about 5 s)."""
    from meddesign.optimizer import OptimProblem, PsoConfig, optimize_design

    problem = OptimProblem(case_model, CASE_REGION, case_cfg_10_50, n_points=11)
    return optimize_design(problem, PsoConfig(seed=7))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[number])
