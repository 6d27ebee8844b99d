"""
Tests for coderivatives of normal cones and of the sweeping velocity map.
"""

import itertools

import numpy as np
import pytest

from sweepctl.catalogue import affine
from sweepctl.coderivatives import (
    OrthantGraphPoint,
    coderivative_domain_check,
    coderivative_F_element,
    coderivative_F_member,
    coderivative_normal_cone,
    coderivative_orthant,
)
from sweepctl.dynamics import PerturbationMap
from sweepctl.exceptions import NoMultiplier, PreconditionError
from sweepctl.geometry import ConstraintSet


# coordinate pairs (x_i, v_i) on each branch of the graph and at its corner
GRAPH_BASES = ((-1.0, 0.0), (0.0, 1.0), (0.0, 0.0))


def sampled_graph_normals(x, v, eps: float = 1e-2) -> np.ndarray:
    """
    Unit proximal normals to gph N_{R^m_-} at graph points near (x, v).

    Grid points around (x, v) are projected onto the graph one coordinate
    pair at a time, and z - proj(z) is a proximal normal at proj(z).
    Rows are interleaved as (x_1, v_1, x_2, v_2, ...).
    """
    m = len(x)
    base = np.column_stack([x, v]).ravel()
    normals = []
    for offset in itertools.product(range(-2, 3), repeat=2 * m):
        z = base + eps * np.asarray(offset, dtype=float)
        normal = np.empty(2 * m)
        for i in range(m):
            pair = z[2 * i:2 * i + 2]
            # one coordinate of the graph: the left half axis joined to the upper half axis
            horiz = np.array([min(pair[0], 0.0), 0.0])
            vert = np.array([0.0, max(pair[1], 0.0)])
            nearest = horiz if np.linalg.norm(pair - horiz) <= np.linalg.norm(pair - vert) else vert
            normal[2 * i:2 * i + 2] = pair - nearest
        size = np.linalg.norm(normal)
        if size > 0:
            normals.append(normal / size)
    return np.array(normals)


def in_sampled_cone(normals: np.ndarray, t: np.ndarray) -> bool:
    size = np.linalg.norm(t)
    if size == 0:
        return True
    return bool(np.any(np.all(np.abs(normals - t / size) <= 1e-9, axis=1)))


@pytest.fixture
def velocity_map():
    """f(x, a) = a on the plane."""
    return PerturbationMap.affine(np.zeros((2, 2)), np.eye(2))


@pytest.fixture
def swirl_map():
    """f(x, a) = (sin x1 + a1, x1 x2 + a2)."""
    return PerturbationMap(
        value=lambda x, a: np.array([np.sin(x[0]) + a[0], x[0] * x[1] + a[1]]),
        jac_x=lambda x, a: np.array([[np.cos(x[0]), 0.0], [x[1], x[0]]]),
        jac_a=lambda x, a: np.eye(2),
        lipschitz=3.0,
    )


class TestOrthant:
    """Tests for coderivative_orthant."""

    @pytest.mark.parametrize("m", [1, 2])
    def test_agrees_with_sampled_normals(self, m):
        """contains(xi) holds exactly when (xi, -y) is a sampled limiting normal of the graph."""
        for combo in itertools.product(GRAPH_BASES, repeat=m):
            x = [c[0] for c in combo]
            v = [c[1] for c in combo]
            normals = sampled_graph_normals(x, v)
            point = OrthantGraphPoint(x, v)
            for xi in itertools.product([-1.0, 0.0, 1.0], repeat=m):
                for y in itertools.product([-1.0, 0.0, 1.0], repeat=m):
                    t = np.column_stack([xi, np.negative(y)]).ravel()
                    expected = in_sampled_cone(normals, t)
                    assert coderivative_orthant(point, y).contains(xi) == expected, (x, v, xi, y)

    def test_sampler_sees_every_branch(self):
        """At the corner the sample holds both axes and the open fourth quadrant."""
        normals = sampled_graph_normals([0.0], [0.0])
        for t in ([0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0], [1.0, -1.0]):
            assert in_sampled_cone(normals, np.array(t)), t
        for t in ([1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0]):
            assert not in_sampled_cone(normals, np.array(t)), t

    def test_loaded_direction_is_empty(self):
        """v_i y_i != 0 leaves nothing."""
        result = coderivative_orthant(OrthantGraphPoint([0.0, -1.0], [2.0, 0.0]), [1.0, 0.0])
        assert result.kind == "empty"
        assert not result.contains([0.0, 0.0])

    def test_contains(self):
        """Membership applies the zero and sign rules."""
        result = coderivative_orthant(OrthantGraphPoint([-1.0, 0.0, 0.0], [0.0, 0.0, 3.0]), [5.0, 1.0, 0.0])
        assert result.contains([0.0, 2.0, -7.0])
        assert not result.contains([1.0, 2.0, 0.0])
        assert not result.contains([0.0, -1.0, 0.0])

    def test_rejects_points_off_the_graph(self):
        """x > 0 or x v != 0 are not graph points."""
        with pytest.raises(PreconditionError):
            OrthantGraphPoint([1.0], [0.0])
        with pytest.raises(PreconditionError):
            OrthantGraphPoint([-1.0], [1.0])


class TestNormalConeCoderivative:
    """Tests for coderivative_normal_cone."""

    def test_corner_of_orthant(self, orthant):
        """A tangent direction along the free face keeps the loaded constraint free."""
        result = coderivative_normal_cone(orthant, [0.0, 0.0], [-1.0, 0.0], [0.0, 1.0])
        assert not result.ambiguous
        (cand,) = result.candidates
        np.testing.assert_allclose(cand.multiplier, [1.0, 0.0])
        assert cand.rules == {0: "free", 1: "zero"}
        assert not cand.empty
        np.testing.assert_allclose(cand.element([2.0, 0.0]), [-2.0, 0.0])

    def test_direction_against_load_is_empty(self, orthant):
        """Moving off the loaded face gives the empty set."""
        (cand,) = coderivative_normal_cone(orthant, [0.0, 0.0], [-1.0, 0.0], [1.0, 0.0]).candidates
        assert cand.empty

    def test_curvature_term(self, disk_complement):
        """On the circle the fixed part is -lam hess g y."""
        (cand,) = coderivative_normal_cone(disk_complement, [1.0, 0.0], [-2.0, 0.0], [0.0, 1.0]).candidates
        np.testing.assert_allclose(cand.multiplier, [2.0])
        np.testing.assert_allclose(cand.fixed, [0.0, -2.0], atol=1e-12)
        assert cand.describe()["rules"] == {"g1": "free"}

    def test_dependent_gradients_enumerate_vertices(self):
        """Three active gradients in the plane give two multiplier vertices."""
        cset = ConstraintSet(
            constraints=(affine([1.0, 0.0]), affine([0.0, 1.0]), affine([1.0, 1.0])),
            M1=1.0, M2=2.0 ** 0.5, M3=1e-12,
        )
        result = coderivative_normal_cone(cset, [0.0, 0.0], [-1.0, -1.0], [0.0, 0.0])
        assert result.ambiguous
        multipliers = sorted(tuple(np.round(c.multiplier, 10)) for c in result.candidates)
        assert multipliers == [(0.0, 0.0, 1.0), (1.0, 1.0, 0.0)]

    def test_not_a_normal(self, orthant):
        """An outward vector has no multiplier."""
        with pytest.raises(NoMultiplier):
            coderivative_normal_cone(orthant, [0.0, 0.0], [1.0, 0.0], [0.0, 0.0])

    def test_point_outside(self, orthant):
        with pytest.raises(PreconditionError, match="C"):
            coderivative_normal_cone(orthant, [-1.0, 0.0], [0.0, 0.0], [0.0, 0.0])

    def test_plicq_failure(self):
        """Opposite active gradients are refused."""
        slab = ConstraintSet(constraints=(affine([1.0, 0.0]), affine([-1.0, 0.0])), M3=1e-12)
        with pytest.raises(PreconditionError, match="PLICQ"):
            coderivative_normal_cone(slab, [0.0, 0.0], [0.0, 0.0], [0.0, 1.0])


class TestVelocityMapCoderivative:
    """Tests for the coderivative of F(x, u, a) = -f(x, a) + N_C(x - u)."""

    def test_domain_check(self, orthant, velocity_map):
        """y is admissible only where the multiplier's constraint is tangent."""
        args = (orthant, velocity_map, [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [-1.0, 0.0])
        assert coderivative_domain_check(*args, [0.0, 1.0])
        assert not coderivative_domain_check(*args, [1.0, 0.0])

    def test_domain_check_requires_normal(self, orthant, velocity_map):
        with pytest.raises(PreconditionError, match="not in N_C"):
            coderivative_domain_check(
                orthant, velocity_map, [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]
            )

    def test_generated_element_is_member(self, orthant, velocity_map):
        """An element built from (lam, gamma) is recognized with the same multipliers."""
        x = u = a = np.zeros(2)
        w, y = np.array([-1.0, 0.0]), np.array([0.0, 1.0])
        candidate = coderivative_F_element(orthant, velocity_map, x, u, a, y, [1.0, 0.0], [0.7, 0.0])
        np.testing.assert_allclose(candidate[0], [-0.7, 0.0])
        np.testing.assert_allclose(candidate[2], [0.0, -1.0])
        np.testing.assert_allclose(candidate[0] + candidate[1], -velocity_map.dx(x, a).T @ y, atol=1e-12)
        result = coderivative_F_member(orthant, velocity_map, x, u, a, w, y, candidate)
        assert result.member
        np.testing.assert_allclose(result.lam, [1.0, 0.0], atol=1e-10)
        np.testing.assert_allclose(result.gamma, [0.7, 0.0], atol=1e-10)

    def test_non_member(self, orthant, velocity_map):
        """A q_u along the untouched constraint cannot be generated."""
        x = u = a = np.zeros(2)
        w, y = np.array([-1.0, 0.0]), np.array([0.0, 1.0])
        candidate = (np.array([0.0, -0.5]), np.array([0.0, 0.5]), np.array([0.0, -1.0]))
        result = coderivative_F_member(orthant, velocity_map, x, u, a, w, y, candidate)
        assert not result.member
        assert result.defect == pytest.approx(0.5)

    def test_control_component_forced_by_f(self, orthant, velocity_map):
        """q_a must equal -f_a^T y."""
        x = u = a = np.zeros(2)
        candidate = (np.zeros(2), np.zeros(2), np.array([1.0, 1.0]))
        result = coderivative_F_member(orthant, velocity_map, x, u, a, [-1.0, 0.0], [0.0, 1.0], candidate)
        assert not result.member
        assert result.lam is None


class TestNonlinearVelocityMap:
    """A single active curved constraint with nonlinear f: the multiplier is unique."""

    x = np.array([1.5, 0.5])
    u = np.array([0.5, 0.5])
    a = np.array([0.2, -0.3])
    y = np.array([0.0, 1.0])

    def load(self, swirl_map):
        """w with w + f(x, a) = -2 grad g(x - u), so the multiplier is 2."""
        return np.array([-2.0, 0.0]) - swirl_map(self.x, self.a)

    def test_element_components(self, disk_complement, swirl_map):
        """q_x + q_u = -f_x^T y, q_a = -f_a^T y and q_u = lam hess g y + grad g^T gamma."""
        q_x, q_u, q_a = coderivative_F_element(
            disk_complement, swirl_map, self.x, self.u, self.a, self.y, [2.0], [0.3]
        )
        np.testing.assert_allclose(q_x + q_u, -swirl_map.dx(self.x, self.a).T @ self.y, atol=1e-12)
        np.testing.assert_allclose(q_x + q_u, [-0.5, -1.5], atol=1e-12)
        np.testing.assert_allclose(q_u, [0.3, 2.0], atol=1e-12)
        np.testing.assert_allclose(q_a, [0.0, -1.0])

    def test_element_is_member(self, disk_complement, swirl_map):
        """Membership recovers lam = 2 and gamma = 0.3."""
        w = self.load(swirl_map)
        assert coderivative_domain_check(disk_complement, swirl_map, self.x, self.u, self.a, w, self.y)
        candidate = coderivative_F_element(
            disk_complement, swirl_map, self.x, self.u, self.a, self.y, [2.0], [0.3]
        )
        result = coderivative_F_member(disk_complement, swirl_map, self.x, self.u, self.a, w, self.y, candidate)
        assert result.member
        np.testing.assert_allclose(result.lam, [2.0], atol=1e-9)
        np.testing.assert_allclose(result.gamma, [0.3], atol=1e-9)

    def test_curvature_mismatch(self, disk_complement, swirl_map):
        """The load fixes lam = 2, so q_u off by 0.1 along hess g y splits a 0.1 / sqrt 2 defect."""
        w = self.load(swirl_map)
        q_x, q_u, q_a = coderivative_F_element(
            disk_complement, swirl_map, self.x, self.u, self.a, self.y, [2.0], [0.3]
        )
        shift = np.array([0.0, 0.1])
        result = coderivative_F_member(
            disk_complement, swirl_map, self.x, self.u, self.a, w, self.y, (q_x - shift, q_u + shift, q_a)
        )
        assert not result.member
        assert result.defect == pytest.approx(0.1 / np.sqrt(2.0), rel=1e-6)
