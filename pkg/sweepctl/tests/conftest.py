"""
Pytest fixtures for sweepctl tests.
"""

import numpy as np
import pytest

from sweepctl.catalogue import affine, sphere_gap
from sweepctl.crowd import CorridorConfig, closed_form_solve
from sweepctl.geometry import ConstraintSet
from sweepctl.ocp import DiscreteDecision


def make_halfspace(a, b: float = 0.0, **constants) -> ConstraintSet:
    """{y : a . y + b >= 0} with flat-set constants."""
    a = np.asarray(a, dtype=float)
    norm = float(np.linalg.norm(a))
    params = {"M1": norm, "M2": norm, "M3": 1e-12, "beta": 1.0, "rho": 1.0}
    params.update(constants)
    return ConstraintSet(constraints=(affine(a, b, "g1"),), **params)


def make_decision(x, u=None, a=None, T: float = 1.0) -> DiscreteDecision:
    """Decision with zero u and zero scalar controls unless given."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = x.shape[0] - 1
    u = np.zeros_like(x) if u is None else u
    a = np.zeros((k, 1)) if a is None else a
    return DiscreteDecision(x=x, u=u, a=a, T=T)


@pytest.fixture
def corridor_config() -> CorridorConfig:
    """Default corridor: exit at 0, agents at -48 and -24, radii 3, tau = 1."""
    return CorridorConfig()


@pytest.fixture
def corridor_solution(corridor_config):
    return closed_form_solve(corridor_config)


@pytest.fixture
def halfspace_4d() -> ConstraintSet:
    """Two discs of radius 3 on a line, in planar coordinates: y3 - y1 - 6 >= 0."""
    return make_halfspace([-1.0, 0.0, 1.0, 0.0], -6.0)


@pytest.fixture
def orthant() -> ConstraintSet:
    """The nonnegative quadrant {y1 >= 0, y2 >= 0}."""
    return ConstraintSet(
        constraints=(affine([1.0, 0.0], 0.0, "g1"), affine([0.0, 1.0], 0.0, "g2")),
        M1=1.0, M2=1.0, M3=1e-12, beta=1.0, rho=1.0,
    )


@pytest.fixture
def disk_complement() -> ConstraintSet:
    """Outside of the unit disc: |y| - 1 >= 0."""
    return ConstraintSet(
        constraints=(sphere_gap(np.eye(2), np.zeros(2), 1.0, "g1"),),
        M1=1.0, M2=1.0, M3=1.0, beta=1.0, rho=1.0,
    )
