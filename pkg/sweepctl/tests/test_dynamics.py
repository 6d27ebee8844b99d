"""
Tests for the perturbation map, control signals and the catching-up scheme.
"""

import math

import numpy as np
import pytest

from sweepctl.dynamics import (
    ControlSignal,
    PerturbationMap,
    catching_up_simulate,
    estimate_bounds,
    verify_feasibility,
)
from sweepctl.exceptions import InfeasibleStart, PreconditionError

from .conftest import make_halfspace


@pytest.fixture
def corridor_like():
    """Two agents at -48 and -24 with free-flight speeds 1.6 and 0.4."""
    cset = make_halfspace([-1.0, 1.0], -6.0)
    f = PerturbationMap.affine(np.zeros((2, 2)), np.eye(2))
    ctrl = ControlSignal.constant(np.zeros(2), [1.6, 0.4], horizon=30.0, cells=300)
    return cset, f, ctrl, np.array([-48.0, -24.0])


class TestPerturbationMap:
    """Tests for PerturbationMap."""

    def test_affine_evaluation(self):
        """f(x, a) = A x + B a + c."""
        f = PerturbationMap.affine([[0.0, 1.0], [0.0, 0.0]], [[1.0], [2.0]], c=[1.0, -1.0])
        np.testing.assert_allclose(f([1.0, 2.0], [3.0]), [6.0, 5.0])
        np.testing.assert_allclose(f.dx([0.0, 0.0], [0.0]), [[0.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(f.da([0.0, 0.0], [0.0]), [[1.0], [2.0]])

    def test_default_lipschitz_is_block_norm(self):
        """The Lipschitz constant defaults to the spectral norm of [A B]."""
        f = PerturbationMap.affine(np.zeros((2, 2)), np.diag([3.0, 1.0]))
        assert f.lipschitz == pytest.approx(3.0)

    def test_inconsistent_shapes(self):
        """B with the wrong number of rows is refused."""
        with pytest.raises(PreconditionError):
            PerturbationMap.affine(np.eye(2), np.ones((3, 1)))

    def test_negative_constants(self):
        """Lipschitz and growth constants must be nonnegative."""
        with pytest.raises(PreconditionError):
            PerturbationMap.affine(np.eye(2), np.eye(2), lipschitz=-1.0)

    def test_jacobians_match_finite_differences(self):
        """Affine Jacobians pass the finite-difference check."""
        f = PerturbationMap.affine(np.array([[1.0, 2.0], [0.0, -1.0]]), np.eye(2))
        assert f.check_jacobians([[0.0, 1.0], [2.0, -1.0]], [[1.0, 0.0], [0.5, 0.5]])

    def test_lipschitz_quotient_bounded_by_constant(self):
        """Sampled quotients never exceed the declared constant."""
        f = PerturbationMap.affine(np.zeros((2, 2)), np.diag([3.0, 1.0]))
        rng = np.random.default_rng(0)
        xs, as_ = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        assert f.lipschitz_quotient(xs, as_) <= f.lipschitz + 1e-12


class TestControlSignal:
    """Tests for ControlSignal."""

    def test_piecewise_linear_u(self):
        """u interpolates its knots and u_dot is the slope of the cell."""
        ctrl = ControlSignal.from_knots([[0.0], [2.0], [2.0]], [[1.0]], horizon=2.0)
        np.testing.assert_allclose(ctrl.u(0.5), [1.0])
        np.testing.assert_allclose(ctrl.u_dot(0.5), [2.0])
        np.testing.assert_allclose(ctrl.u_dot(1.5), [0.0])
        assert ctrl.u_variation() == pytest.approx(2.0)

    def test_cellwise_constant_a(self):
        """a is right-open on equal cells and keeps the last value at the horizon."""
        ctrl = ControlSignal(
            u_times=[0.0, 4.0], u_values=[[0.0], [0.0]],
            a_values=[[1.0], [2.0], [3.0], [4.0]], horizon=4.0,
        )
        assert ctrl.cells == 4
        assert ctrl.a(0.0)[0] == 1.0
        assert ctrl.a(1.0)[0] == 2.0
        assert ctrl.a(3.999)[0] == 4.0
        assert ctrl.a(4.0)[0] == 4.0

    def test_with_horizon_rescales_knots(self):
        """Changing the horizon keeps the knot values and stretches the times."""
        ctrl = ControlSignal.from_knots([[0.0], [1.0]], [[0.0]], horizon=1.0).with_horizon(2.0)
        np.testing.assert_allclose(ctrl.u(1.0), [0.5])
        assert ctrl.horizon == 2.0

    @pytest.mark.parametrize("times", [[0.0, 0.0], [0.0, 0.5], [0.5, 1.0]])
    def test_invalid_knots(self, times):
        """Knots must increase strictly and span [0, horizon]."""
        with pytest.raises(PreconditionError):
            ControlSignal(u_times=times, u_values=[[0.0], [0.0]], a_values=[[0.0]], horizon=1.0)

    def test_nonpositive_horizon(self):
        """The horizon must be positive."""
        with pytest.raises(PreconditionError, match="horizon"):
            ControlSignal.constant([0.0], [0.0], horizon=0.0)


class TestCatchingUp:
    """Tests for catching_up_simulate."""

    def test_free_motion_before_contact(self, corridor_like):
        """Agents move at their own speeds while the gap is positive."""
        cset, f, ctrl, x0 = corridor_like
        traj = catching_up_simulate(cset, f, ctrl, x0, k=300)
        np.testing.assert_allclose(traj.velocities[:140], np.tile([1.6, 0.4], (140, 1)), atol=1e-9)
        np.testing.assert_allclose(traj.eta[:140], 0.0, atol=1e-12)

    def test_contact_and_joint_motion(self, corridor_like):
        """After contact both agents move at the mean speed with eta = 0.6."""
        cset, f, ctrl, x0 = corridor_like
        traj = catching_up_simulate(cset, f, ctrl, x0, k=300)
        j0 = traj.contact_index()
        assert j0 is not None and abs(j0 - 150) <= 1
        np.testing.assert_allclose(traj.velocities[j0 + 1:], 1.0, atol=1e-8)
        np.testing.assert_allclose(traj.eta[j0 + 1:, 0], 0.6, atol=1e-8)
        np.testing.assert_allclose(traj.states[-1], [-9.0, -3.0], atol=1e-8)

    def test_states_stay_feasible(self, corridor_like):
        """Every node satisfies the constraint up to round-off."""
        cset, f, ctrl, x0 = corridor_like
        traj = catching_up_simulate(cset, f, ctrl, x0, k=300)
        assert traj.g_values.min() >= -1e-9
        assert verify_feasibility(cset, ctrl, traj).passed
        assert float(np.max(traj.residual)) <= 1e-8

    def test_mesh(self, corridor_like):
        """Times are the uniform mesh of k cells on [0, T]."""
        cset, f, ctrl, x0 = corridor_like
        traj = catching_up_simulate(cset, f, ctrl, x0, k=300)
        assert traj.k == 300
        assert traj.h == pytest.approx(0.1)
        assert traj.times[-1] == pytest.approx(30.0)

    def test_infeasible_start(self, corridor_like):
        """x0 outside C + u(0) is rejected."""
        cset, f, ctrl, _ = corridor_like
        with pytest.raises(InfeasibleStart):
            catching_up_simulate(cset, f, ctrl, [-48.0, -45.0], k=10)

    def test_invalid_sign(self, corridor_like):
        """Only +1 and -1 are accepted as the sign of f."""
        cset, f, ctrl, x0 = corridor_like
        with pytest.raises(PreconditionError, match="sign"):
            catching_up_simulate(cset, f, ctrl, x0, k=10, sign=0)

    def test_invalid_mesh(self, corridor_like):
        """k must be at least one."""
        cset, f, ctrl, x0 = corridor_like
        with pytest.raises(PreconditionError):
            catching_up_simulate(cset, f, ctrl, x0, k=0)

    def test_moving_set_pushes_state(self):
        """A translate moving right drags a state sitting on its boundary."""
        cset = make_halfspace([1.0], 0.0)
        f = PerturbationMap.affine([[0.0]], [[1.0]])
        ctrl = ControlSignal.from_knots([[0.0], [1.0]], [[0.0]], horizon=1.0)
        traj = catching_up_simulate(cset, f, ctrl, [0.0], k=10)
        np.testing.assert_allclose(traj.states[:, 0], np.linspace(0.0, 1.0, 11), atol=1e-12)
        np.testing.assert_allclose(traj.eta[:, 0], 1.0, atol=1e-9)


class TestBounds:
    """Tests for estimate_bounds and verify_feasibility."""

    def test_state_bound_dominates_trajectory(self, corridor_like):
        """The a priori bound l exceeds every simulated state norm."""
        cset, f, ctrl, x0 = corridor_like
        traj = catching_up_simulate(cset, f, ctrl, x0, k=300)
        bounds = estimate_bounds(f, ctrl, x0)
        assert float(np.max(np.linalg.norm(traj.states, axis=1))) <= bounds.l
        assert math.isfinite(bounds.velocity_bound(1.0))

    def test_feasibility_reports_worst_node(self, corridor_like):
        """A shifted control makes the audit fail at the node it breaks."""
        cset, f, ctrl, x0 = corridor_like
        traj = catching_up_simulate(cset, f, ctrl, x0, k=300)
        shifted = ControlSignal.constant([0.0, 1.0], [1.6, 0.4], horizon=30.0, cells=300)
        check = verify_feasibility(cset, shifted, traj)
        assert not check.passed
        assert check.min_value == pytest.approx(-1.0, abs=1e-8)
