import time

import numpy as np
import pytest

from stackelberg.equilibrium import DistanceToOracle
from stackelberg.harness import regret_baseline, reference_config, run_experiment
from stackelberg.ridehail_game import RideHailGame, reference_params

INNER_TOLS = (1e-6, 0.1, 0.3, 0.5)
N_SEEDS = 10

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def params():
    return reference_params()


@pytest.fixture
def game(params):
    return RideHailGame(params)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_feasible(params, rng, n=None):
    """Random joint allocations inside the feasible set, shape ``(n, N, d)``."""
    size = (1 if n is None else n, params.N, params.d)
    raw = rng.dirichlet(np.ones(params.d + 1), size=size[:2])[..., : params.d]
    x = raw * params.M_arr[:, None] * rng.uniform(0.05, 1.0, size=size[:2])[..., None]
    x = np.minimum(x, params.cap())
    return x[0] if n is None else x


def random_prices(params, rng, n):
    return rng.uniform(params.pi_min, params.pi_max, size=(n, params.d))


@pytest.fixture(scope="session")
def reference_sweep():
    """Reference experiment for every inner tolerance and 10 seeds.

    Shared by the acceptance module and the harness property tests so the
    expensive runs happen once per session.
    """
    start = time.perf_counter()
    baseline, _ = regret_baseline(reference_params())
    runs = {}
    for tol in INNER_TOLS:
        runs[tol] = [
            run_experiment(reference_config(seed=seed, inner_stop=DistanceToOracle(tol)), baseline)
            for seed in range(N_SEEDS)
        ]
    return {"runs": runs, "baseline": baseline, "seconds": time.perf_counter() - start}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
