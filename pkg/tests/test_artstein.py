import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdstab.artstein import (ControlHistory, active_window, closed_form_kernel, delay_steps,
                             feedback_alpha, forward_transform, history_to_csv, input_columns,
                             invert_path, invert_transform, kernel_table, kernel_to_csv, series_alpha)
from rdstab.exceptions import HistoryError
from rdstab.gain import GainSet
from rdstab.reduction import model_from_coefficients


def scalar_setup(k, D):
    model = model_from_coefficients([], [], [], D=D)
    gains = GainSet(D, np.array([k]), np.eye(1), (), 1.0, np.array([[k]]))
    return model, gains


def zero_gains(gains):
    return GainSet(gains.D, np.zeros_like(gains.K1), gains.P, gains.poles, gains.M, gains.Acl)


class TestWindow:
    def test_delay_steps(self):
        assert delay_steps(1.0, 0.01) == 100
        assert delay_steps(0.0, 0.1) == 0
        with pytest.raises(ValueError):
            delay_steps(1.0, 0.03)

    @pytest.mark.parametrize("t, expected", [(0.5, None), (1.0, None), (1.5, (1.0, 1.5)),
                                             (2.0, (1.0, 2.0)), (2.5, (1.5, 2.5))])
    def test_boundaries(self, t, expected):
        assert active_window(t, 1.0) == expected


class TestHistory:
    def test_append_and_delay(self):
        h = ControlHistory(0.5, 1.0)
        for v in (0.0, 0.0, 3.0, 4.0):
            h.append(v)
        assert h.delayed(3) == 0.0
        assert h.delayed(4) == 3.0
        assert np.array_equal(h.times, [0, 0.5, 1.0, 1.5])

    def test_rejects_nonfinite(self):
        h = ControlHistory(0.5, 1.0)
        with pytest.raises(HistoryError):
            h.append(np.inf)

    def test_off_grid_time(self):
        with pytest.raises(HistoryError):
            ControlHistory(0.5, 1.0).index_of(0.3)

    def test_grows(self):
        h = ControlHistory(0.1, 1.0, capacity=1)
        for i in range(100):
            h.append(float(i))
        assert len(h) == 100 and h.values[-1] == 99


class TestForwardTransform:
    def test_zero_history(self, ref_model):
        h = ControlHistory.from_samples(0.01, 1.0, np.zeros(301))
        X = np.array([1.0, 2.0])
        assert np.array_equal(forward_transform(X, h, ref_model, 3.0), X)

    def test_no_delay(self):
        model, _ = scalar_setup(1.0, 0.0)
        h = ControlHistory.from_samples(0.1, 0.0, np.ones(11))
        assert forward_transform(np.array([2.0]), h, model, 1.0)[0] == 2.0

    def test_constant_input(self):
        model, _ = scalar_setup(1.0, 1.0)
        h = ControlHistory.from_samples(0.01, 1.0, np.r_[np.zeros(100), np.ones(401)])
        assert forward_transform(np.array([0.0]), h, model, 5.0)[0] == pytest.approx(1.0, abs=1e-10)
        # window (D, t) before 2D
        assert forward_transform(np.array([0.0]), h, model, 1.5)[0] == pytest.approx(0.5, abs=1e-10)

    def test_short_history(self, ref_model):
        h = ControlHistory.from_samples(0.01, 1.0, np.zeros(150))
        with pytest.raises(HistoryError):
            forward_transform(np.zeros(2), h, ref_model, 2.0)


class TestFeedback:
    def test_zero_before_delay(self, ref_model, ref_gains):
        h = ControlHistory.from_samples(0.01, 1.0, np.zeros(50))
        assert feedback_alpha(np.array([3.0, -2.0]), h, ref_gains, ref_model, 0.5) == 0.0

    def test_zero_gain(self, ref_traj, ref_model, ref_gains):
        h = ControlHistory.from_samples(0.01, 1.0, ref_traj.alpha[:500])
        assert feedback_alpha(ref_traj.X1[500], h, zero_gains(ref_gains), ref_model, 5.0) == 0.0

    def test_equals_gain_times_transform(self, ref_traj, ref_gains):
        # the implicit endpoint makes alpha = K1 Z1 hold on the grid from t = D on
        assert np.max(np.abs(ref_traj.alpha[100:] - ref_traj.Z1[100:] @ ref_gains.K1)) < 1e-10

    def test_history_gap(self, ref_model, ref_gains):
        h = ControlHistory.from_samples(0.01, 1.0, np.zeros(120))
        with pytest.raises(HistoryError):
            feedback_alpha(np.zeros(2), h, ref_gains, ref_model, 1.5)


class TestSeries:
    @pytest.mark.parametrize("t", [1.0, 1.5, 3.0, 5.0])
    def test_agrees_with_history(self, ref_traj, ref_model, ref_gains, t):
        res = series_alpha(ref_traj.X1, 0.01, ref_gains, ref_model, t)
        assert res.converged
        assert res.value == pytest.approx(ref_traj.alpha[int(round(t / 0.01))], abs=1e-6)

    def test_zero_input(self, ref_model, ref_gains):
        res = series_alpha(np.zeros((151, 2)), 0.01, ref_gains, ref_model, 1.5)
        assert res.value == 0.0 and res.converged

    def test_before_delay(self, ref_model, ref_gains):
        assert series_alpha(np.ones((51, 2)), 0.01, ref_gains, ref_model, 0.5).value == 0.0

    def test_scalar_delay_equation(self):
        # alpha = k + k int_{max(t-D, D)}^t alpha solves alpha' = k (alpha - alpha(t-D)) past 2D
        k, D, t, dt = 0.5, 1.0, 2.5, 1e-3
        model, gains = scalar_setup(k, D)
        exact = np.exp(k * (t - 2 * D)) * (k * np.exp(k * D) - k * k * (t - 2 * D))
        res = series_alpha(np.ones((int(round(t / dt)) + 1, 1)), dt, gains, model, t)
        assert res.value == pytest.approx(exact, abs=1e-8)

    def test_term_bound(self, ref_traj, ref_model, ref_gains):
        res = series_alpha(ref_traj.X1, 0.01, ref_gains, ref_model, 5.0)
        assert res.bound_violations == 0

    def test_diverges_numerically_far_out(self, ref_traj, ref_model, ref_gains):
        # terms grow geometrically before the factorial takes over; 60 terms do not reach t = 20
        res = series_alpha(ref_traj.X1, 0.01, ref_gains, ref_model, 20.0, check_bound=False)
        assert not res.converged and res.terms == 60

    def test_path_too_short(self, ref_model, ref_gains):
        with pytest.raises(HistoryError):
            series_alpha(np.zeros((10, 2)), 0.01, ref_gains, ref_model, 1.0)


class TestKernel:
    def test_zero_gain(self, ref_model, ref_gains):
        kt = kernel_table(zero_gains(ref_gains), ref_model, 0.01, 2.0)
        assert not np.any(kt.values) and not np.any(kt.inverse_weights)

    @pytest.mark.parametrize("k", [1.0, -1.5])
    def test_scalar_exponential(self, k):
        model, gains = scalar_setup(k, 1.0)
        kt = kernel_table(gains, model, 1e-4, 1.0, series_horizon=0.0)
        r = 1e-4 * np.arange(kt.values.shape[0])
        assert np.max(np.abs(kt.values[:, 0, 0] - k * np.exp(k * r))) < 1e-8

    def test_closed_form_second_order(self, ref_model, ref_gains):
        errs = []
        for dt in (0.02, 0.01):
            K = delay_steps(1.0, dt)
            kt = kernel_table(ref_gains, ref_model, dt, 1.0, series_horizon=0.0)
            r = dt * np.arange(K + 1)
            errs.append(np.max(np.abs(kt.values - closed_form_kernel(ref_gains, ref_model, r))))
        assert errs[1] < 2e-4
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)

    def test_series_matches_marching(self, ref_model, ref_gains):
        kt = kernel_table(ref_gains, ref_model, 0.01, 2.0)
        assert kt.series_values.shape[0] == 201
        assert kt.series_discrepancy < 1e-8

    def test_jump_at_delay(self, ref_model, ref_gains):
        kt = kernel_table(ref_gains, ref_model, 0.001, 1.01, series_horizon=0.0)
        jump = kt.value_at(1.001) - kt.value_at(1.0)
        assert np.allclose(jump, -np.outer(ref_model.B1, ref_gains.K1), atol=0.1)

    def test_decays(self, ref_model, ref_gains):
        kt = kernel_table(ref_gains, ref_model, 0.01, 40.0, series_horizon=0.0)
        assert np.max(np.abs(kt.values[-1])) < 1e-6
        assert not np.any(kt.value_at(-0.5))


class TestInversion:
    def test_before_delay(self, ref_traj, ref_model, ref_gains):
        kt = kernel_table(ref_gains, ref_model, 0.01, 40.0, series_horizon=0.0)
        X = invert_transform(ref_traj.Z1, kt, 0.8)
        assert np.array_equal(X, ref_traj.Z1[80])

    def test_zero_gain(self, ref_model, ref_gains):
        kt = kernel_table(zero_gains(ref_gains), ref_model, 0.01, 5.0, series_horizon=0.0)
        Z = np.random.default_rng(1).normal(size=(501, 2))
        assert np.array_equal(invert_path(Z, kt), Z)

    def test_reference_roundtrip(self, ref_traj, ref_model, ref_gains):
        kt = kernel_table(ref_gains, ref_model, 0.01, 40.0, series_horizon=0.0)
        assert np.max(np.abs(invert_path(ref_traj.Z1, kt) - ref_traj.X1)) < 1e-4

    def test_truncated_window(self, ref_traj, ref_model, ref_gains):
        # the lag-D window is exact up to 2D and loses the X1(D) memory afterwards
        kt = kernel_table(ref_gains, ref_model, 0.01, 40.0, series_horizon=0.0)
        X = invert_path(ref_traj.Z1, kt, window="lag")
        assert np.max(np.abs(X[:201] - ref_traj.X1[:201])) < 1e-10
        assert np.max(np.abs(X - ref_traj.X1)) > 1.0

    def test_short_kernel(self, ref_traj, ref_model, ref_gains):
        kt = kernel_table(ref_gains, ref_model, 0.01, 2.0, series_horizon=0.0)
        with pytest.raises(ValueError, match="horizon"):
            invert_path(ref_traj.Z1, kt)

    def test_short_path(self, ref_model, ref_gains):
        kt = kernel_table(ref_gains, ref_model, 0.01, 2.0, series_horizon=0.0)
        with pytest.raises(HistoryError):
            invert_transform(np.zeros((10, 2)), kt, 1.0)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 1.0]))
    def test_roundtrip_random_paths(self, seed, D):
        rng = np.random.default_rng(seed)
        model = model_from_coefficients([rng.uniform(0, 1)], [rng.uniform(0.5, 1.5)], [rng.uniform(-1, 1)], D)
        from rdstab.gain import design_gains
        gains = design_gains(model, [-rng.uniform(0.3, 2), -rng.uniform(0.3, 2)])
        dt = 0.05
        m = int(round(4 * D / dt)) + 1
        X = np.cumsum(rng.normal(size=(m, 2)), axis=0) * 0.1
        cols = input_columns(model, dt)
        h = ControlHistory(dt, D)
        for k in range(m):
            h.append(feedback_alpha(X[k], h, gains, model, k * dt, cols))
        Z = np.array([forward_transform(X[k], h, model, k * dt, cols) for k in range(m)])
        kt = kernel_table(gains, model, dt, 4 * D, series_horizon=0.0)
        assert np.allclose(invert_path(Z, kt), X, atol=1e-10)


class TestDifferentialConsistency:
    def test_residual_second_order(self, ref_basis, ref_model, ref_gains):
        from rdstab.simulator import SimConfig, run
        x = ref_basis.grid
        Bd = ref_model.delayed_input()
        res = []
        for dt in (0.02, 0.01):
            tr = run(SimConfig(6, dt, 6.0, x * (2 * np.pi - x)), ref_gains, ref_model, ref_basis)
            Z = tr.Z1
            d = (Z[2:] - Z[:-2]) / (2 * dt) - Z[1:-1] @ ref_model.A1.T - np.outer(tr.alpha[1:-1], Bd)
            r = np.linalg.norm(d, axis=1)
            r[delay_steps(1.0, dt) - 1] = 0.0  # stencil centred on the jump of alpha
            res.append(r.max())
        assert res[0] / res[1] == pytest.approx(4.0, rel=0.2)


class TestExport:
    def test_kernel_csv(self, ref_model, ref_gains, tmp_path):
        kt = kernel_table(ref_gains, ref_model, 0.05, 2.0)
        kernel_to_csv(kt, tmp_path / "k.csv")
        data = np.loadtxt(tmp_path / "k.csv", delimiter=",", skiprows=1)
        assert data.shape == (41, 5)
        assert np.array_equal(data[:, 1:].reshape(-1, 2, 2), kt.values)

    def test_history_csv(self, tmp_path):
        h = ControlHistory.from_samples(0.1, 0.2, [0.0, 0.0, 1.5])
        history_to_csv(h, tmp_path / "a.csv")
        assert (tmp_path / "a.csv").read_text().splitlines()[-1] == "0.20000000000000001,1.5"
