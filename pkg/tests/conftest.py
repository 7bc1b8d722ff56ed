from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from selmut.domain import SpatialDomain
from selmut.model import ConstantKernel, GaussianFloorKernel, QuadraticSpace, QuadraticTrait, ScenarioConfig

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


def make_cfg(components=((-1.0, 1.0),), *, A=1.0, epsilon=0.3, growth=None, kernel=None, hx=0.25, htheta=0.25, **kw):
    return ScenarioConfig(
        domain=SpatialDomain(tuple(components)),
        A=A,
        epsilon=epsilon,
        growth=growth if growth is not None else QuadraticSpace(1.0, 1.0, 1.0),
        kernel=kernel if kernel is not None else ConstantKernel(1.0),
        hx=hx,
        htheta=htheta,
        **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    return make_cfg(((-1.1, -0.1), (0.1, 1.1)), A=1.5, kernel=GaussianFloorKernel(), hx=0.25, htheta=0.5)


@pytest.fixture
def flat_cfg():
    """Growth independent of position: eigenfunctions are constant."""
    return make_cfg(growth=QuadraticTrait(1.0, 1.0, 0.0), hx=0.125, htheta=0.1)
