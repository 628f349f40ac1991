"""Shared fixtures: the small whole-space and layer grids most tests reuse.

Expansion reports are session-scoped because a full second-order expansion
costs a dense solve; every consumer treats them as read-only.
"""

import numpy as np
import pytest

from weakloc import expansion, grids, models


def whole_space_grid(m: int) -> grids.CellGrid:
    spec = grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                          cell_lengths=(1.0,), mesh_lateral=m)
    return grids.build_cell_grid(spec)


@pytest.fixture(scope="session")
def ws128():
    return whole_space_grid(128)


@pytest.fixture(scope="session")
def ws64():
    return whole_space_grid(64)


@pytest.fixture(scope="session")
def layer_grid():
    spec = grids.GridSpec(mode=grids.LAYER, lateral_dim=1, cell_lengths=(1.0,),
                          mesh_lateral=16, width=np.pi, mesh_transversal=48)
    return grids.build_cell_grid(spec)


@pytest.fixture(scope="session")
def cos_model(ws128):
    return models.build_model("potential",
                              {"w1": lambda x: np.cos(2 * np.pi * x)}, ws128)


@pytest.fixture(scope="session")
def cos_report(cos_model):
    return expansion.expand(cos_model, b=0.0)


@pytest.fixture(scope="session")
def linear_model():
    # a constant shift is mesh-exact, so only eigensolver rounding matters;
    # eps_mach * 4 m^2 must sit clearly under the 1e-12 this fixture certifies
    g = whole_space_grid(16)
    return models.build_model("potential", {"w1": lambda x: -np.ones_like(x)}, g)


@pytest.fixture(scope="session")
def shifted_cos_model(ws128):
    x0 = 0.05
    return models.build_model(
        "potential", {"w1": lambda x: np.cos(2 * np.pi * (x - x0))}, ws128)
