"""
Tests for the two-agent corridor model.
"""

import logging
import math
from dataclasses import replace

import numpy as np
import pytest

from sweepctl.crowd import (
    TABLE_ROWS,
    CorridorConfig,
    aligned_horizon,
    build_ocp,
    closed_form_solve,
    compare_table,
    corridor_decision,
    discrete_solution,
    embed_planar,
    reference_solution,
    table_rows,
    truncate_to,
    verify_conditions,
    verify_tau_sweep,
)
from sweepctl.exceptions import NoContactRegime, PreconditionError, require_contact_regime
from sweepctl.shooting import ShootingOptions, solve_shooting


class TestCorridorConfig:
    """Tests for CorridorConfig validation."""

    def test_defaults(self, corridor_config):
        assert corridor_config.Lambda1 == 48.0
        assert corridor_config.Lambda2 == 24.0
        np.testing.assert_allclose(corridor_config.x0, [-48.0, -24.0])

    @pytest.mark.parametrize(
        "kwargs",
        [{"L1": 0.0}, {"tau": -1.0}, {"x1_init": -20.0}, {"x1_init": -28.0}, {"x2_init": 5.0, "x1_init": -48.0}],
    )
    def test_invalid(self, kwargs):
        """Radii and tau must be positive, the rear agent behind and apart, both before the exit."""
        with pytest.raises(PreconditionError):
            CorridorConfig(**kwargs)


class TestClosedForm:
    """Tests for closed_form_solve at the default data."""

    def test_optimal_time_and_controls(self, corridor_solution):
        assert corridor_solution.T_opt == pytest.approx(math.sqrt(1440.0))
        assert corridor_solution.a1 == pytest.approx(48.0 / math.sqrt(1440.0))
        assert corridor_solution.a2 == pytest.approx(24.0 / math.sqrt(1440.0))
        assert corridor_solution.cost == pytest.approx(72.0)

    def test_contact_data(self, corridor_solution):
        """Free-flight speeds 1.6 and 0.4, contact at t* = 15, joint speed 1."""
        assert corridor_solution.contact_regime
        assert corridor_solution.sb1 == pytest.approx(1.6)
        assert corridor_solution.sb2 == pytest.approx(0.4)
        assert corridor_solution.s_after == pytest.approx(1.0)
        assert corridor_solution.t_contact == pytest.approx(15.0)
        assert corridor_solution.Lambda == pytest.approx(18.0)

    def test_final_positions_and_trajectory_cost(self, corridor_solution):
        """After contact the pair moves together, so neither agent ends at the exit."""
        T = corridor_solution.T_opt
        np.testing.assert_allclose(corridor_solution.final_positions, [T - 39.0, T - 33.0])
        assert corridor_solution.trajectory_cost == pytest.approx(2.0 * T + 6.0)

    @pytest.mark.parametrize("tau", [0.5, 1.0, 3.0, 10.0])
    def test_identities(self, corridor_config, tau):
        """a1 T = Lambda1, a1 = 2 a2 at these data, and sb = a^2 with s = a."""
        sol = closed_form_solve(corridor_config.with_tau(tau))
        assert sol.a1 * sol.T_opt == pytest.approx(48.0)
        assert sol.a1 == pytest.approx(2.0 * sol.a2)
        assert sol.sb1 == pytest.approx(sol.a1 ** 2)
        assert sol.s_after == pytest.approx(tau)
        assert sol.t_contact * (sol.sb1 - sol.sb2) == pytest.approx(18.0)

    def test_time_decreases_with_tau(self):
        """A higher price of time shortens the evacuation."""
        times = [sol.T_opt for sol in table_rows(taus=range(1, 11))]
        assert all(b < a for a, b in zip(times, times[1:]))

    def test_prescribed_speeds(self, corridor_config):
        """Given speeds change the free-flight and joint speeds but not the controls."""
        sol = closed_form_solve(CorridorConfig(s1=2.0, s2=1.0))
        ref = closed_form_solve(corridor_config)
        assert sol.a1 == pytest.approx(ref.a1)
        assert sol.sb1 == pytest.approx(2.0 * ref.a1)
        assert sol.s_after == pytest.approx(0.5 * (2.0 * ref.a1 + ref.a2))

    def test_no_contact_regime(self):
        """With a cheap horizon the agents never touch."""
        sol = closed_form_solve(CorridorConfig(tau=0.01))
        assert not sol.contact_regime
        assert sol.t_contact > sol.T_opt
        with pytest.raises(NoContactRegime):
            require_contact_regime(sol)
        with pytest.raises(NoContactRegime):
            reference_solution(CorridorConfig(tau=0.01))


class TestTable:
    """Tests for the stored reference table."""

    def test_every_row_matches(self):
        """Closed-form values truncated to the printed precision reproduce the table."""
        comparisons = compare_table(table_rows())
        assert len(comparisons) == len(TABLE_ROWS)
        for comparison in comparisons:
            assert comparison.matched, (comparison.tau, comparison.mismatches)

    def test_mismatch_is_reported(self, corridor_solution):
        """A solution that differs from its stored row lists the columns."""
        wrong = replace(corridor_solution, T_opt=40.0)
        (comparison,) = compare_table([wrong])
        assert not comparison.matched
        assert comparison.mismatches == ["T_opt"]

    def test_missing_row(self, corridor_config):
        sol = closed_form_solve(corridor_config.with_tau(11.0))
        with pytest.raises(PreconditionError, match="no stored row"):
            compare_table([sol])

    @pytest.mark.parametrize(
        "value, printed, expected",
        [(37.947331922, "37.94", "37.94"), (1.6666666, "1.66", "1.66"), (16.000000000000004, "16", "16"),
         (2.9999999999, "3", "3"), (1.26491106, "1.26", "1.26")],
    )
    def test_truncate_to(self, value, printed, expected):
        assert truncate_to(value, printed) == expected


class TestDiscreteCorridor:
    """Tests for the simulated corridor."""

    def test_aligned_horizon_puts_contact_on_a_node(self, corridor_solution):
        k = 500
        T = aligned_horizon(corridor_solution, k)
        steps = 15.0 / (T / k)
        assert steps == pytest.approx(round(steps), abs=1e-9)
        T_opt = corridor_solution.T_opt
        assert 0.0 <= T_opt - T < T_opt ** 2 / (k * 15.0)

    def test_kinematics(self, corridor_config, corridor_solution):
        """Contact at t*, eta = 0.6 afterwards, and the predicted end positions."""
        traj, decision = discrete_solution(corridor_config, 500)
        j0 = traj.contact_index()
        assert traj.times[j0] == pytest.approx(15.0, abs=1e-9)
        np.testing.assert_allclose(traj.eta[j0:, 0], 0.6, atol=1e-8)
        T = decision.T
        expected = [-48.0 + 1.6 * 15.0 + (T - 15.0), -24.0 + 0.4 * 15.0 + (T - 15.0)]
        np.testing.assert_allclose(traj.states[-1], expected, atol=1e-8)

    def test_reference_solution(self, corridor_config):
        """The continuous process follows the two phases."""
        ref = reference_solution(corridor_config)
        np.testing.assert_allclose(ref.state(10.0), [-32.0, -20.0])
        np.testing.assert_allclose(ref.state(20.0), [-19.0, -13.0])
        np.testing.assert_allclose(ref.velocity(14.0, left=True), [1.6, 0.4])
        np.testing.assert_allclose(ref.velocity(16.0), [1.0, 1.0])

    def test_embed_planar(self):
        np.testing.assert_allclose(embed_planar([[1.0, 2.0]]), [[1.0, 0.0, 2.0, 0.0]])

    def test_tau_sweep(self, corridor_config):
        """The residual check holds for each tau in a sweep."""
        reports = verify_tau_sweep(corridor_config, [1.0, 3.0], k=200)
        assert [r.passed for r in reports] == [True, True]


class TestBoundedControls:
    """The corridor with A_i = [alpha1, alpha2] run through the generic problem and solver."""

    def test_box_enters_the_problem(self, corridor_config):
        cfg = replace(corridor_config, control_bounds=(0.5, 1.5))
        ocp, _ = build_ocp(cfg, 20)
        assert ocp.controls_a.kind == "box"
        np.testing.assert_allclose(ocp.controls_a.upper, [1.5, 1.5])

    def test_interior_optimum_still_stationary(self, corridor_config):
        """A box holding (1.26, 0.63) strictly inside leaves every residual below 1e-6."""
        report = verify_conditions(replace(corridor_config, control_bounds=(0.5, 1.5)), 200)
        assert report.passed, report.failures

    def test_shooting_respects_the_box(self, corridor_config, caplog):
        """With A = [0.5, 1] the closed form is cut off and shooting stays inside A."""
        cfg = replace(corridor_config, control_bounds=(0.5, 1.0))
        with caplog.at_level(logging.WARNING, logger="sweepctl.crowd"):
            ocp, _ = build_ocp(cfg, 20)
        assert "outside" in caplog.text
        init = corridor_decision(ocp, np.full((20, 2), 0.75), 40.0)
        result = solve_shooting(ocp, init, ShootingOptions(control_blocks=1, max_iters=20))
        assert np.all(result.decision.a >= 0.5 - 1e-12)
        assert np.all(result.decision.a <= 1.0 + 1e-12)
        assert result.cost < result.history[0].cost

    def test_reversed_bounds(self, corridor_config):
        with pytest.raises(PreconditionError, match="lower <= upper"):
            replace(corridor_config, control_bounds=(1.0, 0.5))
