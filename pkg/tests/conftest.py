import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hessianlab.hermgeo import MetricField, SpectralGrid
from hessianlab.symfun import OperatorSpec

settings.register_profile("lab", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")


def all_operators(n):
    """One representative per family and valid parameter at dimension n."""
    ops = [OperatorSpec.sigma_k_root(n, k) for k in range(1, n + 1)]
    ops += [OperatorSpec.sigma_quotient(n, k, l) for k in range(2, n + 1) for l in range(1, k)]
    ops += [OperatorSpec.sigma_k_over_km1(n, k) for k in range(2, n + 1)]
    ops += [OperatorSpec.log_rho_k(n, k) for k in range(1, n + 1)]
    ops += [OperatorSpec.sum_arctan(n)]
    return ops


def op_id(op):
    return f"{op.family}-n{op.n}-k{op.k}-l{op.l}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def grid2_16():
    return SpectralGrid(2, 16)


@pytest.fixture(scope="session")
def conformal2_16(grid2_16):
    x1 = grid2_16.coord(0)
    return MetricField.conformal(grid2_16, grid2_16.full(0.1 * np.cos(2 * np.pi * x1)))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        title, ok = mod.RESULTS[key]
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if ok else 'FAIL'}  {title}")
