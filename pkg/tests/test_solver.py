"""
Unit tests for the RANS solver and its wall diagnostics.
"""
import pytest
import numpy as np

import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from betac_toolkit.errors import InvalidArgumentError, SolverDivergenceError
from betac_toolkit.models.flow import (
    BoundaryConditions,
    CorrectionField,
    FlowState,
    SolverSettings,
    TurbulenceModel,
)
from betac_toolkit.ops import solver as solver_module
from betac_toolkit.ops.discretization import Coefficients
from betac_toolkit.ops.inversion import twin_beta
from betac_toolkit.ops.mesh import build_channel_1d, build_channel_2d
from betac_toolkit.ops.solver import (
    clipped_beta,
    eddy_viscosity,
    fit_log_law,
    omega_production,
    skin_friction,
    solve_rans,
    wall_units,
)


LAMINAR = SolverSettings(model=TurbulenceModel.LAMINAR, tolerance=1e-10)


@pytest.fixture(scope="module")
def channel():
    return build_channel_1d(32, 1.15, 1.0)


@pytest.fixture(scope="module")
def re180():
    return BoundaryConditions(nu=1.0 / 180.0, forcing=1.0)


@pytest.fixture(scope="module")
def turbulent_state(channel, re180):
    return solve_rans(channel, re180, 1.0, SolverSettings(tolerance=1e-10, max_iterations=400))


class TestLaminarChannel:

    def test_poiseuille_profile(self):
        mesh = build_channel_1d(32, 1.0, 1.0)
        bc = BoundaryConditions(nu=0.01, forcing=1.0)
        state = solve_rans(mesh, bc, 1.0, LAMINAR)
        y = mesh.centers[:, 1]
        exact = bc.forcing / bc.nu * (y - 0.5 * y ** 2)
        assert np.max(np.abs(state.u - exact)) / np.max(exact) <= 0.01

    def test_wall_units_of_laminar_channel(self):
        mesh = build_channel_1d(64, 1.0, 1.0)
        state = solve_rans(mesh, BoundaryConditions(nu=0.01, forcing=1.0), 1.0, LAMINAR)
        y_plus, u_plus, u_tau = wall_units(state)
        assert abs(u_tau - 1.0) < 0.02
        assert np.all(np.diff(y_plus) > 0)
        assert np.allclose(u_plus * u_tau, state.u)

    def test_skin_friction_matches_wall_shear(self):
        mesh = build_channel_1d(32, 1.0, 1.0)
        state = solve_rans(mesh, BoundaryConditions(nu=0.01, forcing=1.0), 1.0, LAMINAR)
        centers, cf = skin_friction(state, 2.0)
        assert len(cf) == 1
        assert centers[0, 1] == 0.0
        expected = 0.01 * state.u[0] / mesh.centers[0, 1] / (0.5 * 2.0 ** 2)
        assert np.isclose(cf[0], expected)

    def test_laminar_has_no_eddy_viscosity(self):
        mesh = build_channel_1d(16, 1.0, 1.0)
        state = solve_rans(mesh, BoundaryConditions(nu=0.01, forcing=1.0), 1.0, LAMINAR)
        assert np.all(eddy_viscosity(state) == 0.0)
        assert np.all(omega_production(state, 2.0) == 0.0)


class TestArguments:

    def test_channel_needs_forcing(self, channel):
        with pytest.raises(InvalidArgumentError):
            solve_rans(channel, BoundaryConditions(nu=0.01), 1.0, LAMINAR)

    def test_inlet_needs_velocity(self):
        mesh = build_channel_2d(8, 4, 2.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            solve_rans(mesh, BoundaryConditions(nu=0.01), 1.0, LAMINAR)

    def test_turbulent_inlet_needs_k_and_omega(self):
        mesh = build_channel_2d(8, 4, 2.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            solve_rans(mesh, BoundaryConditions(nu=0.01, inlet_velocity=1.0))

    def test_beta_length_mismatch(self, channel, re180):
        with pytest.raises(InvalidArgumentError):
            solve_rans(channel, re180, np.ones(5), LAMINAR)

    def test_initial_state_from_other_mesh(self, channel):
        other = build_channel_1d(16, 1.0, 1.0)
        bc = BoundaryConditions(nu=0.01, forcing=1.0)
        initial = solve_rans(other, bc, 1.0, LAMINAR)
        with pytest.raises(InvalidArgumentError):
            solve_rans(channel, bc, 1.0, LAMINAR, initial=initial)

    def test_beta_floor_applied(self, channel):
        beta = clipped_beta(np.zeros(channel.n_cells), channel, SolverSettings())
        assert np.all(beta == 1e-3)

    def test_correction_field_rejects_non_positive(self):
        with pytest.raises(InvalidArgumentError):
            CorrectionField(beta=np.array([1.0, 0.0, 1.0]))


class TestTurbulentChannel:

    def test_converged_fields_are_physical(self, turbulent_state):
        assert all(value <= 1e-10 for value in turbulent_state.residual_norms.values())
        assert np.all(turbulent_state.u > 0)
        assert np.all(turbulent_state.k >= 0)
        assert np.all(turbulent_state.omega > 0)
        assert np.all(turbulent_state.nu_t >= 0)
        assert np.all(turbulent_state.v == 0)

    def test_centreline_is_fastest(self, turbulent_state):
        assert np.argmax(turbulent_state.u) == len(turbulent_state.u) - 1

    def test_omega_production_is_linear_in_beta(self, turbulent_state):
        base = omega_production(turbulent_state, 1.0)
        assert np.allclose(omega_production(turbulent_state, 2.5), 2.5 * base)
        assert np.all(base >= 0)

    def test_eddy_viscosity_matches_state(self, turbulent_state):
        assert np.allclose(eddy_viscosity(turbulent_state), turbulent_state.nu_t)

    def test_solve_is_deterministic(self, channel, re180, turbulent_state):
        again = solve_rans(channel, re180, 1.0, SolverSettings(tolerance=1e-10, max_iterations=400))
        assert np.array_equal(again.u, turbulent_state.u)
        assert np.array_equal(again.omega, turbulent_state.omega)

    def test_warm_start_converges_immediately(self, channel, re180, turbulent_state):
        warm = solve_rans(channel, re180, 1.0, SolverSettings(tolerance=1e-8), initial=turbulent_state)
        assert warm.iterations == 0

    def test_reduced_production_speeds_up_flow(self, channel, re180, turbulent_state):
        beta = np.full(channel.n_cells, 0.7)
        corrected = solve_rans(channel, re180, beta, SolverSettings(tolerance=1e-10, max_iterations=400),
                               initial=turbulent_state)
        assert not np.allclose(corrected.u, turbulent_state.u)

    def test_warm_start_with_new_beta_matches_cold_start(self, channel, re180, turbulent_state):
        beta = twin_beta(channel)
        cold = solve_rans(channel, re180, beta, SolverSettings(tolerance=1e-10, max_iterations=400))
        warm = solve_rans(channel, re180, beta, SolverSettings(tolerance=1e-10, max_iterations=400),
                          initial=turbulent_state)

        assert all(value <= 1e-10 for value in warm.residual_norms.values())
        assert np.allclose(warm.u, cold.u, rtol=1e-6)
        assert np.allclose(warm.k, cold.k, rtol=1e-5, atol=1e-12)

    def test_failed_warm_start_restarts_cold(self, channel, re180, turbulent_state, mocker):
        real = solver_module._solve_newton
        calls = []

        def stall_once(*args, **kwargs):
            calls.append(kwargs.get("stall_window"))
            if len(calls) == 1:
                raise SolverDivergenceError("Residual stalled")
            return real(*args, **kwargs)

        mocker.patch("betac_toolkit.ops.solver._solve_newton", side_effect=stall_once)
        state = solve_rans(channel, re180, 0.8, SolverSettings(tolerance=1e-8, max_iterations=400),
                           initial=turbulent_state)

        assert calls == [solver_module.STALL_WINDOW, None]
        assert all(value <= 1e-8 for value in state.residual_norms.values())

    def test_cold_start_failure_is_not_retried(self, channel, re180, mocker):
        newton = mocker.patch("betac_toolkit.ops.solver._solve_newton",
                              side_effect=SolverDivergenceError("stalled"))
        with pytest.raises(SolverDivergenceError):
            solve_rans(channel, re180, 1.0)
        assert newton.call_count == 1

    def test_wall_cell_omega_is_pinned(self, channel, re180, turbulent_state):
        y = channel.wall_distance[0]
        assert turbulent_state.omega[0] == pytest.approx(6.0 * re180.nu / (0.075 * y ** 2), rel=1e-8)

    def test_iteration_limit_raises_with_partial_state(self, channel, re180):
        with pytest.raises(SolverDivergenceError) as exc_info:
            solve_rans(channel, re180, 1.0, SolverSettings(tolerance=1e-12, max_iterations=1))
        error = exc_info.value
        assert error.exit_code == 3
        assert error.partial_state is not None
        assert error.partial_state.u.shape == (channel.n_cells,)
        assert len(error.history) >= 1


class TestPinnedRows:

    @pytest.fixture
    def chain(self):
        return Coefficients(
            a_p=np.array([2.0, 3.0, 2.0]),
            b=np.array([1.0, 1.0, 1.0]),
            rows=np.array([0, 1, 1, 2]),
            cols=np.array([1, 0, 2, 1]),
            a_nb=np.array([1.0, 1.0, 1.0, 1.0]),
        )

    def test_pinned_row_drops_neighbours(self, chain):
        chain.pin(np.array([0]), np.array([5.0]))
        phi = np.array([4.0, 7.0, 1.0])
        r = chain.residual(phi)

        assert r[0] == pytest.approx(2.0 * (5.0 - 4.0))
        assert r[1] == pytest.approx(1.0 - 3.0 * 7.0 + 4.0 + 1.0)

    def test_pinned_rows_leave_the_scale(self, chain):
        fluid = np.ones(3, dtype=bool)
        phi = np.array([100.0, 1.0, 1.0])
        before = chain.scale(phi, fluid)
        chain.pin(np.array([0]), np.array([100.0]))

        assert before == pytest.approx(200.0 + 3.0 + 2.0 + 3.0)
        assert chain.scale(phi, fluid) == pytest.approx(3.0 + 2.0 + 2.0)


class TestLogLaw:

    def test_fit_recovers_synthetic_constants(self):
        y_plus = np.geomspace(1.0, 500.0, 80)
        u_plus = np.log(y_plus) / 0.41 + 5.2
        kappa, B = fit_log_law(y_plus, u_plus)
        assert np.isclose(kappa, 0.41)
        assert np.isclose(B, 5.2)

    def test_fit_needs_points_in_band(self):
        with pytest.raises(InvalidArgumentError):
            fit_log_law(np.array([1.0, 2.0, 200.0]), np.ones(3))

    def test_wall_units_need_1d(self):
        mesh = build_channel_2d(8, 4, 2.0, 1.0)
        zeros = np.zeros(mesh.n_cells)
        state = FlowState(mesh=mesh, nu=0.05, model=TurbulenceModel.LAMINAR, u=np.ones(mesh.n_cells),
                          v=zeros, p=zeros, k=zeros, omega=np.ones(mesh.n_cells), nu_t=zeros)
        with pytest.raises(InvalidArgumentError):
            wall_units(state)

    @pytest.mark.slow
    def test_sst_log_layer(self):
        mesh = build_channel_1d(64, 1.08, 1.0)
        bc = BoundaryConditions(nu=1.0 / 550.0, forcing=1.0)
        state = solve_rans(mesh, bc, 1.0, SolverSettings(tolerance=1e-8, max_iterations=500))
        kappa, B = fit_log_law(*wall_units(state)[:2])
        assert 0.38 <= kappa <= 0.43
        assert 4.0 <= B <= 6.5


class TestDevelopingChannel:

    @pytest.mark.slow
    def test_laminar_mass_conservation(self):
        mesh = build_channel_2d(20, 10, 2.0, 1.0)
        bc = BoundaryConditions(nu=0.05, inlet_velocity=1.0)
        state = solve_rans(mesh, bc, 1.0, SolverSettings(model=TurbulenceModel.LAMINAR, tolerance=1e-6,
                                                         max_iterations=2000))
        u = state.u.reshape(mesh.ny, mesh.nx)
        column_flux = (u * mesh.dy[:, None]).sum(axis=0)
        assert np.allclose(column_flux, 1.0, rtol=0.02)
        assert u[:, -1].max() > 1.0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
