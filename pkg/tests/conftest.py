"""Shared solved artifacts, built once per session at desk scale."""

import numpy as np
import pytest

from habitretire import dual_boundary as db
from habitretire import fbp
from habitretire.params import preset
from habitretire.primal import PolicyEngine

PRESET_NAMES = ("gamma15", "gamma05")


@pytest.fixture(scope="session", params=PRESET_NAMES)
def preset_name(request):
    return request.param


@pytest.fixture(scope="session")
def params(preset_name):
    return preset(preset_name)


@pytest.fixture(scope="session")
def curve(params):
    return db.solve_boundary(params, db.TimeGrid(0.0, params.T1, 200))


@pytest.fixture(scope="session")
def sol(params):
    return fbp.solve_lcp(params, fbp.make_grid(params, 100, 400))


@pytest.fixture(scope="session")
def engine(params, sol):
    pde_curve = db.solve_boundary(params, sol.grid.times)
    return PolicyEngine(params, sol, pde_curve)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260825)
