"""
Tests for the discrete free-time problem: decisions, cost and constraint report.
"""

import math

import numpy as np
import pytest

from sweepctl.catalogue import TerminalCost, zero_running, zero_terminal
from sweepctl.crowd import build_ocp, corridor_decision, discrete_solution
from sweepctl.dynamics import PerturbationMap
from sweepctl.exceptions import EvaluationFailure, PreconditionError
from sweepctl.geometry import ControlSetA
from sweepctl.ocp import DiscreteDecision, SweepingOCP, check_constraints, cost_Jk

from .conftest import make_decision, make_halfspace


def line_ocp(k: int = 2, terminal=None) -> SweepingOCP:
    """One-dimensional problem with zero costs on {x >= 0}."""
    return SweepingOCP(
        geometry=make_halfspace([1.0]),
        dynamics=PerturbationMap.affine([[0.0]], [[1.0]]),
        controls_a=ControlSetA.free(1),
        terminal_cost=terminal or zero_terminal(1),
        running_cost=zero_running(1, 1),
        x0=[0.0],
        k=k,
    )


class TestDiscreteDecision:
    """Tests for DiscreteDecision."""

    def test_mesh_quantities(self):
        """h, times and difference quotients follow from T and k."""
        d = make_decision([[0.0], [1.0], [3.0]], T=4.0)
        assert d.k == 2
        assert d.h == 2.0
        np.testing.assert_allclose(d.times, [0.0, 2.0, 4.0])
        np.testing.assert_allclose(d.x_rates, [[0.5], [1.0]])

    def test_shape_mismatch(self):
        """a must have one row fewer than x."""
        with pytest.raises(PreconditionError, match="inconsistent"):
            DiscreteDecision(x=np.zeros((3, 1)), u=np.zeros((3, 1)), a=np.zeros((3, 1)), T=1.0)

    def test_nonpositive_time(self):
        with pytest.raises(PreconditionError):
            make_decision([[0.0], [1.0]], T=0.0)

    def test_problem_needs_two_cells(self):
        """k = 1 has no interior node and is refused."""
        with pytest.raises(PreconditionError, match="k"):
            line_ocp(k=1)


class TestCost:
    """Tests for cost_Jk."""

    def test_closed_form_controls(self, corridor_config, corridor_solution):
        """At T_opt the discrete cost is the closed-form trajectory cost."""
        ocp, init = build_ocp(corridor_config, 2000)
        total, breakdown = cost_Jk(ocp, init)
        assert total == pytest.approx(corridor_solution.trajectory_cost, abs=0.05)
        assert breakdown.running == pytest.approx(0.5 * init.T * 2.0, rel=1e-9)

    def test_short_horizon_before_contact(self, corridor_config, corridor_solution):
        """Stopping at T = 10 < t* gives 32 + 20 + 10 + 10 = 72."""
        ocp, _ = build_ocp(corridor_config, 50)
        d = corridor_decision(ocp, np.tile(corridor_solution.controls, (50, 1)), 10.0)
        total, _ = cost_Jk(ocp, d)
        assert total == pytest.approx(72.0, abs=1e-9)

    def test_u_regularity_penalties(self):
        """Excess of the first u-rate and of the second difference is squared."""
        d = make_decision([[0.0], [1.0], [2.0]], u=np.array([[0.0], [1.0], [1.0]]), T=2.0)
        _, breakdown = cost_Jk(line_ocp(), d, mu_tilde=0.0)
        assert breakdown.u_start_penalty == pytest.approx(1.0)
        assert breakdown.u_variation_penalty == pytest.approx(1.0)
        assert breakdown.total == pytest.approx(2.0)

    def test_no_penalties_without_budget(self):
        """Without a budget mu_tilde is infinite and the penalties vanish."""
        d = make_decision([[0.0], [1.0], [2.0]], u=np.array([[0.0], [5.0], [-5.0]]), T=2.0)
        total, _ = cost_Jk(line_ocp(), d)
        assert total == 0.0

    def test_time_proximity_when_localized(self, corridor_config, corridor_solution):
        """Localized problems pay (T - T_ref)^2 / 2."""
        ocp, init = build_ocp(corridor_config, 100, localized=True)
        _, at_opt = cost_Jk(ocp, init)
        assert at_opt.time_proximity == pytest.approx(0.0, abs=1e-20)
        d = corridor_decision(ocp, np.tile(corridor_solution.controls, (100, 1)), 30.0)
        _, shorter = cost_Jk(ocp, d)
        assert shorter.time_proximity == pytest.approx(0.5 * (corridor_solution.T_opt - 30.0) ** 2)
        assert shorter.rate_proximity > 0

    def test_nonfinite_cost(self):
        """A terminal cost returning inf raises EvaluationFailure."""
        broken = TerminalCost(value=lambda x, T: math.inf, subgradient=lambda x, T: (np.zeros(1), 0.0))
        with pytest.raises(EvaluationFailure):
            cost_Jk(line_ocp(terminal=broken), make_decision([[0.0], [1.0], [2.0]]))


class TestCheckConstraints:
    """Tests for check_constraints."""

    def test_aligned_decision_is_feasible(self, corridor_config):
        """With t* on a node both dynamics readings are satisfied."""
        ocp, _ = build_ocp(corridor_config, 200)
        _, decision = discrete_solution(corridor_config, 200, aligned=True)
        for reading in ("explicit", "implicit"):
            report = check_constraints(ocp, decision, con1_reading=reading)
            assert report.passed, report.failures

    def test_unaligned_contact_cell(self, corridor_config):
        """Off the mesh, only the implicit reading accepts the contact cell."""
        ocp, _ = build_ocp(corridor_config, 50)
        _, decision = discrete_solution(corridor_config, 50, aligned=False)
        assert check_constraints(ocp, decision, con1_reading="implicit").passed
        explicit = check_constraints(ocp, decision, con1_reading="explicit")
        assert explicit.failures == ["dynamics"]

    def test_initial_state_and_moving_set(self):
        """A wrong start and a node outside C are both reported."""
        d = make_decision([[1.0], [-1.0], [0.0]])
        report = check_constraints(line_ocp(), d)
        assert report.residuals["initial_state"] == pytest.approx(1.0)
        assert report.residuals["moving_set"] == pytest.approx(1.0)
        assert set(report.failures) >= {"initial_state", "moving_set"}

    def test_unknown_reading(self):
        with pytest.raises(PreconditionError):
            check_constraints(line_ocp(), make_decision([[0.0], [0.0], [0.0]]), con1_reading="both")
