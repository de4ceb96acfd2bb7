import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdstab.reduction import (ReducedModel, controllability_matrix, delayed_rank, kalman_check,
                              model_from_coefficients, vandermonde_det)


def random_model(rng, n, D=0.0):
    lam = np.sort(rng.uniform(-1, 3, n))[::-1]
    return model_from_coefficients(lam, rng.normal(size=n), rng.normal(size=n), D)


class TestReducedModel:
    def test_structure(self):
        m = model_from_coefficients([2.0, 1.0], [0.5, -0.5], [1.0, 3.0], D=0.7)
        assert np.array_equal(m.A1, [[0, 0, 0], [0.5, 2, 0], [-0.5, 0, 1]])
        assert np.array_equal(m.B1, [1, 1, 3])
        assert m.size == 3

    def test_reference(self, ref_model):
        assert ref_model.n == 1
        assert ref_model.A1[1, 1] == pytest.approx(0.25, abs=1e-6)
        assert ref_model.B1[1] == pytest.approx(-2 / np.sqrt(np.pi), abs=1e-5)

    def test_rejects_negative_delay(self):
        with pytest.raises(ValueError):
            model_from_coefficients([1.0], [1.0], [1.0], D=-1.0)

    def test_dict_roundtrip(self, ref_model):
        back = ReducedModel.from_dict(ref_model.to_dict())
        assert np.array_equal(back.A1, ref_model.A1) and back.D == ref_model.D

    def test_immutable(self, ref_model):
        with pytest.raises(ValueError):
            ref_model.A1[0, 0] = 1.0


class TestKalman:
    def test_two_mode_example(self):
        # det[B, AB, A^2 B] for lambda = (1, -1), a = (1, 1), b = 0
        m = model_from_coefficients([1.0, -1.0], [1.0, 1.0], [0.0, 0.0])
        brute = np.linalg.det(controllability_matrix(m.A1, m.B1))
        assert brute == pytest.approx(-2.0)
        assert vandermonde_det(m) == pytest.approx(-2.0)

    def test_reference_value(self, ref_model):
        ok, det = kalman_check(ref_model)
        assert ok
        assert det == pytest.approx(1 / (2 * np.sqrt(np.pi)), rel=1e-5)
        assert vandermonde_det(ref_model) == pytest.approx(det, rel=1e-12)

    def test_repeated_eigenvalue_raises(self):
        m = model_from_coefficients([1.0, 1.0], [1.0, 2.0], [0.0, 0.0])
        with pytest.raises(ValueError, match="coincide"):
            vandermonde_det(m)
        assert not kalman_check(m)[0]

    def test_uncontrollable_mode(self):
        # a_1 + lambda_1 b_1 = 0
        m = model_from_coefficients([2.0, -1.0], [-2.0, 1.0], [1.0, 0.5])
        assert not kalman_check(m)[0]
        assert abs(vandermonde_det(m)) < 1e-14

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_closed_form_matches_brute_force(self, n, seed):
        m = random_model(np.random.default_rng(seed), n)
        brute = np.linalg.det(controllability_matrix(m.A1, m.B1))
        assert vandermonde_det(m) == pytest.approx(brute, rel=1e-8, abs=1e-12)

    @pytest.mark.parametrize("D", [0.0, 0.5, 2.0])
    def test_delay_keeps_rank(self, ref_model, D):
        assert delayed_rank(ref_model, D) == ref_model.size
