"""Lockstep integrators: right-hand sides, single steps, runs, monitors."""

import math

import numpy as np
import pytest

from conftest import pseudo_states
from qstab.dynamics import (
    IntegratorSpec,
    LockstepState,
    averaged_rhs,
    control_value,
    oscillating_rhs,
    run,
    step_euler,
    step_strang,
)
from qstab.operators import FeedbackParams, build_operators, damping, feedback_terms
from qstab.spectral import SineBasisSpec, grid_function, potential_matrix, solve_eigenbasis


def ground(m=5):
    x = np.zeros(m, complex)
    x[0] = 1.0
    return x


class TestRhs:
    def test_averaged_rhs_at_ground_state(self, validation_setup):
        ops, params = validation_setup.ops, validation_setup.params
        rhs = averaged_rhs(ground(), ops, params)
        np.testing.assert_allclose(rhs, -1j * ops.h0_diag[0] * ground(), atol=1e-15)

    def test_averaged_rhs_real_state_is_free(self, validation_setup):
        ops, params = validation_setup.ops, validation_setup.params
        x = np.array([0.6, 0.0, 0.8, 0, 0], dtype=complex)
        np.testing.assert_allclose(averaged_rhs(x, ops, params), -1j * ops.h0_diag * x, atol=1e-15)

    def test_averaged_rhs_norm_matches_matrix_oracle(self, validation_setup):
        ops, params = validation_setup.ops, validation_setup.params
        x = validation_setup.x0
        i1, i2 = feedback_terms(x, ops, params)
        alpha = -params.k * i1
        beta = damping(i2, params.g_kind)
        h = np.diag(ops.h0_diag) + alpha * ops.h1 + (alpha**2 + 0.5 * beta**2) * ops.h2
        assert np.linalg.norm(averaged_rhs(x, ops, params)) == pytest.approx(
            np.linalg.norm(h @ x), rel=1e-14
        )

    def test_oscillating_rhs_free(self, validation_setup):
        ops = validation_setup.ops
        x = pseudo_states(5, 1)[0]
        np.testing.assert_allclose(oscillating_rhs(x, 0.0, ops), -1j * ops.h0_diag * x)

    def test_oscillating_rhs_equal_moments(self, free_basis_m8):
        """Q1 == Q2 and u = 1 collapses to H0 + 2 H1."""
        ops = build_operators(free_basis_m8, grid_function("x"), grid_function("x"))
        x = pseudo_states(8, 1)[0]
        expected = -1j * ((np.diag(ops.h0_diag) + 2 * ops.h1) @ x)
        np.testing.assert_allclose(oscillating_rhs(x, 1.0, ops), expected, atol=1e-14)

    def test_rhs_is_norm_preserving_generator(self, validation_setup):
        for x in pseudo_states(5, 10):
            for u in (-0.5, 0.0, 1.7):
                rhs = oscillating_rhs(x, u, validation_setup.ops)
                assert abs(np.vdot(x, rhs).real) < 1e-12

    def test_oscillating_rhs_rejects_nonfinite_u(self, validation_setup):
        with pytest.raises(ValueError):
            oscillating_rhs(ground(), math.inf, validation_setup.ops)


class TestControlValue:
    def test_vanishes_at_ground_state(self, validation_setup):
        for t in (0.0, 0.4, 10.0):
            assert control_value(
                t, ground(), 1e-3, validation_setup.ops, validation_setup.params
            ) == pytest.approx(0.0, abs=1e-14)

    def test_sine_peak_and_constancy(self, validation_setup):
        ops, params = validation_setup.ops, validation_setup.params
        x = validation_setup.x0
        i1, i2 = feedback_terms(x, ops, params)
        alpha, beta = -params.k * i1, damping(i2, params.g_kind)
        eps = 1e-3
        assert control_value(eps * math.pi / 2, x, eps, ops, params) == pytest.approx(
            alpha + beta, rel=1e-12
        )
        if beta == 0.0:
            assert control_value(0.123, x, eps, ops, params) == alpha

    def test_requires_positive_eps(self, validation_setup):
        with pytest.raises(ValueError):
            control_value(0.0, ground(), 0.0, validation_setup.ops, validation_setup.params)


class TestIntegratorSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            IntegratorSpec(method="rk4")
        with pytest.raises(ValueError):
            IntegratorSpec(dt=0.0)
        with pytest.raises(ValueError):
            IntegratorSpec(dt=1e-2, epsilon=1e-3)
        with pytest.raises(ValueError):
            IntegratorSpec(epsilon=-1.0)
        IntegratorSpec(dt=1e-3, epsilon=0.0)  # averaged-only run is fine


class TestSingleSteps:
    def test_euler_ground_state_is_pure_phase(self, validation_setup):
        spec = IntegratorSpec(method="euler", dt=1e-3, epsilon=1e-3)
        state = LockstepState(t=0.0, x_av=ground(), x_eps=ground())
        out = step_euler(state, spec, validation_setup.ops, validation_setup.params)
        np.testing.assert_allclose(np.abs(out.x_av), np.abs(ground()), atol=1e-12)
        assert out.t == pytest.approx(1e-3)

    def test_strang_free_flow_exact(self, validation_setup):
        """With vanishing control the step is the exact diagonal phase rotation."""
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        x = np.exp(0.3j) * ground()  # on the target orbit the feedback vanishes
        state = LockstepState(t=0.0, x_av=x.copy(), x_eps=x.copy())
        out = step_strang(state, spec, validation_setup.ops, validation_setup.params)
        expected = np.exp(-1j * validation_setup.ops.h0_diag * 1e-3) * x
        np.testing.assert_allclose(out.x_av, expected, atol=1e-12)
        np.testing.assert_allclose(out.x_eps, expected, atol=1e-12)

    def test_strang_norm_preserved_per_step(self, validation_setup):
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        state = LockstepState(t=0.0, x_av=validation_setup.x0.copy(), x_eps=validation_setup.x0.copy())
        for _ in range(20):
            state = step_strang(state, spec, validation_setup.ops, validation_setup.params)
            assert abs(np.linalg.norm(state.x_av) - 1.0) < 1e-12
            assert abs(np.linalg.norm(state.x_eps) - 1.0) < 1e-12

    def test_euler_consistency_with_rhs(self, validation_setup):
        """(X(dt) - X)/dt converges to the averaged vector field."""
        ops, params = validation_setup.ops, validation_setup.params
        x = validation_setup.x0
        rhs = averaged_rhs(x, ops, params)
        errs = []
        for dt in (1e-4, 5e-5):
            spec = IntegratorSpec(method="euler", dt=dt, epsilon=0.0)
            out = step_euler(LockstepState(0.0, x.copy(), x.copy()), spec, ops, params)
            errs.append(np.linalg.norm((out.x_av - x) / dt - rhs))
        # first-order consistency: the defect is O(dt) with constant ~ |H0^2 x|/2
        scale = 0.5 * np.linalg.norm(ops.h0_diag**2 * x)
        assert errs[0] < 1.5 * scale * 1e-4
        assert errs[1] < 0.6 * errs[0]

    def test_euler_strang_one_step_agreement(self, validation_setup):
        """Cross-integrator oracle: single steps agree to O(dt)."""
        ops, params = validation_setup.ops, validation_setup.params
        x = validation_setup.x0
        for dt in (1e-3, 5e-4):
            se = IntegratorSpec(method="euler", dt=dt, epsilon=1e-3)
            ss = IntegratorSpec(method="strang", dt=dt, epsilon=1e-3)
            oe = step_euler(LockstepState(0.0, x.copy(), x.copy()), se, ops, params)
            os_ = step_strang(LockstepState(0.0, x.copy(), x.copy()), ss, ops, params)
            assert np.linalg.norm(oe.x_av - os_.x_av) < 10 * dt**2 * np.max(ops.h0_diag)

    def test_method_mismatch_rejected(self, validation_setup):
        spec = IntegratorSpec(method="euler", dt=1e-3, epsilon=1e-3)
        state = LockstepState(0.0, ground(), ground())
        with pytest.raises(ValueError):
            step_strang(state, spec, validation_setup.ops, validation_setup.params)


class TestRun:
    def test_ground_state_run_all_zero(self, validation_setup):
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        traj = run(ground(), validation_setup.ops, validation_setup.params, spec,
                   t_final=1.0, stride=100)
        assert not traj.aborted
        assert np.max(np.abs(traj.column("u"))) < 1e-12
        assert np.max(traj.column("lyapunov_av")) < 1e-12
        assert np.max(traj.column("gap_h2")) < 1e-12

    def test_row_count_and_time_grid(self, validation_setup):
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        for t_final, stride in ((1.0, 100), (0.5, 7), (2.0, 1000)):
            traj = run(validation_setup.x0, validation_setup.ops, validation_setup.params,
                       spec, t_final=t_final, stride=stride)
            nsteps = math.floor(t_final / spec.dt + 1e-9)
            assert traj.data.shape[0] == nsteps // stride + 1
            t = traj.column("t")
            assert np.all(np.diff(t) > 0)
            assert t[0] == 0.0

    def test_recorded_u_matches_columns(self, validation_setup):
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        traj = run(validation_setup.x0, validation_setup.ops, validation_setup.params,
                   spec, t_final=0.5, stride=50)
        t = traj.column("t")
        expect = traj.column("alpha") + traj.column("beta") * np.sin(t / spec.epsilon)
        np.testing.assert_allclose(traj.column("u"), expect, atol=1e-14)

    def test_sup_gap_dominates_recorded_gaps(self, validation_setup):
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        traj = run(validation_setup.x0, validation_setup.ops, validation_setup.params,
                   spec, t_final=2.0, stride=100)
        assert traj.sup_gap >= traj.column("gap_h2").max() - 1e-15

    def test_gap_plateaus_rather_than_growing(self, validation_setup):
        """The averaged/oscillating gap saturates instead of accumulating."""
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        traj = run(validation_setup.x0, validation_setup.ops, validation_setup.params,
                   spec, t_final=30.0, stride=10)
        gap = traj.column("gap_h2")
        half = gap.size // 2
        assert gap[half:].max() <= 1.5 * gap[:half].max()

    def test_averaged_only_run(self, validation_setup):
        """epsilon = 0 disables the oscillating lane; its columns mirror."""
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=0.0)
        traj = run(validation_setup.x0, validation_setup.ops, validation_setup.params,
                   spec, t_final=1.0, stride=100)
        assert np.all(traj.column("gap_h2") == 0.0)
        np.testing.assert_array_equal(traj.column("dist_eps"), traj.column("dist_av"))
        np.testing.assert_array_equal(traj.states_eps, traj.states_av)
        np.testing.assert_array_equal(traj.x_eps, traj.x_av)
        assert traj.sup_gap == 0.0 and traj.tail_gap == 0.0

    def test_monitor_abort_on_oversized_gain(self, validation_setup):
        """1 - k*I2 <= 0 aborts with a diagnostic, keeping partial rows."""
        bad = FeedbackParams(k=12.0, gamma=validation_setup.params.gamma, g_kind="clip")
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        traj = run(validation_setup.x0, validation_setup.ops, bad, spec,
                   t_final=5.0, stride=100)
        assert traj.aborted
        assert traj.abort_reason == "ki2"
        assert traj.abort_step >= 0
        assert traj.data.shape[0] >= 1  # the initial row survives

    def test_states_recorded_on_sphere(self, validation_setup):
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        traj = run(validation_setup.x0, validation_setup.ops, validation_setup.params,
                   spec, t_final=2.0, stride=200)
        norms_av = np.linalg.norm(traj.states_av, axis=1)
        norms_eps = np.linalg.norm(traj.states_eps, axis=1)
        assert np.max(np.abs(norms_av - 1.0)) < 1e-9
        assert np.max(np.abs(norms_eps - 1.0)) < 1e-9

    def test_input_validation(self, validation_setup):
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        args = (validation_setup.ops, validation_setup.params, spec)
        with pytest.raises(ValueError):
            run(2.0 * validation_setup.x0, *args, t_final=1.0)
        with pytest.raises(ValueError):
            run(validation_setup.x0, *args, t_final=0.0)
        with pytest.raises(ValueError):
            run(validation_setup.x0, *args, t_final=1.0, stride=0)


class TestSmoothDamping:
    def test_smooth_variant_runs_and_decays(self, validation_setup):
        params = FeedbackParams(k=0.15, gamma=validation_setup.params.gamma, g_kind="smooth")
        spec = IntegratorSpec(method="strang", dt=1e-3, epsilon=1e-3)
        traj = run(validation_setup.x0, validation_setup.ops, params, spec,
                   t_final=20.0, stride=1000)
        assert not traj.aborted
        L = traj.column("lyapunov_av")
        assert L[-1] < L[0]
        assert np.all(traj.column("beta") >= 0.0)
