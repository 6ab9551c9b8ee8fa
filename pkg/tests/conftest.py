import functools

import numpy as np
import pytest

from kdv_backstepping import InitialCondition, ScenarioConfig, TriGrid, run_scenario, solve_kernel_set


@functools.lru_cache(maxsize=None)
def kernel_set(lam, m):
    return solve_kernel_set(lam, TriGrid(m))


@functools.lru_cache(maxsize=None)
def cached_run(**kwargs):
    return run_scenario(ScenarioConfig(**kwargs))


def bump(a=1.0):
    return InitialCondition("bump", a)


ZERO = InitialCondition("zero", 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
