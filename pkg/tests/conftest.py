import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from eddpc.core import Trajectory
from eddpc.systems import four_tank, four_tank_dims, random_system

settings.register_profile("ci", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def simulate_data(model, T, rng, eps=0.0, u_range=4.0, dims=None):
    """Uniform-input open-loop record from x0 = 0; returns (noisy, clean)."""
    dims = dims or model.dims
    U = rng.uniform(-u_range, u_range, (T, dims.m))
    _, Y = model.simulate(np.zeros(dims.n), U)
    noise = rng.uniform(-eps, eps, Y.shape) if eps > 0 else 0.0
    return Trajectory(U, Y + noise, dims), Trajectory(U, Y, dims)


def random_case(seed, max_m=3, max_p=3, max_n=6):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, max_m + 1))
    p = int(rng.integers(1, max_p + 1))
    n = int(rng.integers(1, max_n + 1))
    model = random_system(rng, m, p, n)
    return model, rng


@pytest.fixture(scope="session")
def ft():
    return four_tank()


@pytest.fixture(scope="session")
def ft_dims():
    return four_tank_dims()


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


# acceptance registry: criterion id -> (passed, detail); printed after the run
ACCEPTANCE = {}


def record(cid: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[cid] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)
    for cid in sorted(ACCEPTANCE, key=key):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:<3} {'PASS' if ok else 'FAIL'}  {detail}")
