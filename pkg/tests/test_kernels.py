import numpy as np
import pytest
from numpy.testing import assert_allclose

from nfftgp.errors import ParameterError, ShapeError
from nfftgp.kernels import (Family, FeatureWindows, HyperParams, KernelSpec, Operator, additive_kernel_entry,
                            cross_matrix, dense_matrix, dense_neg_log_likelihood, derivative_kernel_value,
                            kernel_value, softplus, softplus_grad, softplus_inverse)


class TestSoftplus:
    def test_zero_maps_to_log2(self):
        assert HyperParams((0.0, 0.0, 0.0)).values == pytest.approx([np.log(2.0)] * 3)

    def test_inverse_round_trip(self):
        y = np.array([1e-6, 0.1, 1.0, 50.0])
        assert_allclose(softplus(softplus_inverse(y)), y, rtol=1e-10)

    def test_large_inputs_stay_finite(self):
        assert softplus(800.0) == pytest.approx(800.0)
        assert softplus_grad(800.0) == pytest.approx(1.0)
        assert softplus_grad(-800.0) == pytest.approx(0.0, abs=1e-300)

    def test_inverse_rejects_nonpositive(self):
        with pytest.raises(ParameterError):
            softplus_inverse(0.0)

    def test_grad_is_sigmoid(self):
        x = np.linspace(-5, 5, 11)
        h = 1e-6
        assert_allclose(softplus_grad(x), (softplus(x + h) - softplus(x - h)) / (2 * h), rtol=1e-6)

    def test_params_reject_wrong_length(self):
        with pytest.raises(ShapeError):
            HyperParams((0.0, 0.0))


class TestFamily:
    @pytest.mark.parametrize("name,family", [("rbf", Family.GAUSSIAN), ("Gaussian", Family.GAUSSIAN),
                                             ("matern(1/2)", Family.MATERN12), ("m", Family.MATERN12)])
    def test_aliases(self, name, family):
        assert Family.parse(name) is family

    def test_unknown(self):
        with pytest.raises(ParameterError):
            Family.parse("cauchy")


class TestWindows:
    def test_overlap_rejected(self):
        with pytest.raises(ParameterError, match="overlaps"):
            FeatureWindows(((0, 1), (1, 2)))

    def test_too_large_rejected(self):
        with pytest.raises(ParameterError):
            FeatureWindows(((0, 1, 2, 3),))

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            FeatureWindows(())

    def test_single_window_baseline_allows_any_size(self):
        w = FeatureWindows.single(7)
        assert w.P == 1 and w.features == list(range(7))

    def test_dimension_check(self):
        with pytest.raises(ShapeError):
            FeatureWindows(((0, 5),)).check_dim(5)

    def test_one_based(self):
        assert FeatureWindows(((2, 0), (1,))).one_based() == [[3, 1], [2]]


class TestKernelValues:
    def test_unit_at_zero(self):
        for family in Family:
            assert kernel_value(family, np.zeros(3), 0.3) == 1.0
            assert derivative_kernel_value(family, np.zeros(3), 0.3) == 0.0

    def test_matern_value(self):
        assert kernel_value("matern12", [0.3, 0.4], 0.5) == pytest.approx(np.exp(-1.0))

    @pytest.mark.parametrize("family", list(Family))
    def test_derivative_matches_finite_difference(self, family):
        r, ell, h = np.array([0.2, -0.1, 0.3]), 0.35, 1e-6
        fd = (kernel_value(family, r, ell + h) - kernel_value(family, r, ell - h)) / (2 * h)
        assert derivative_kernel_value(family, r, ell) == pytest.approx(fd, rel=1e-6)

    def test_rejects_nonpositive_ell(self):
        with pytest.raises(ParameterError):
            kernel_value("gaussian", [0.1], 0.0)

    def test_additive_entry_sums_windows(self, gauss_spec, rng):
        x, y = rng.uniform(size=6), rng.uniform(size=6)
        p = gauss_spec.params
        expected = p.sigma_f ** 2 * (kernel_value("gaussian", x[:3] - y[:3], p.ell)
                                     + kernel_value("gaussian", x[3:] - y[3:], p.ell))
        assert additive_kernel_entry(gauss_spec, x, y) == pytest.approx(expected)


class TestDenseOracles:
    def test_khat_is_spd_with_expected_diagonal(self, gauss_spec, cube_data):
        X, _ = cube_data
        K = dense_matrix(gauss_spec, X)
        p = gauss_spec.params
        assert_allclose(np.diag(K), p.sigma_f ** 2 * 2 + p.sigma_eps ** 2)
        assert_allclose(K, K.T)
        assert np.linalg.eigvalsh(K).min() > 0

    def test_entries_match_pointwise_kernel(self, matern_spec, cube_data):
        X, _ = cube_data
        K = dense_matrix(matern_spec, X[:8], Operator.K)
        assert K[2, 5] == pytest.approx(additive_kernel_entry(matern_spec, X[2], X[5]))

    def test_derivative_operators(self, gauss_spec, cube_data):
        X, _ = cube_data
        X = X[:20]
        p = gauss_spec.params
        h = 1e-6
        plus = KernelSpec(gauss_spec.family, gauss_spec.windows, HyperParams.from_values(p.sigma_f, p.ell + h, p.sigma_eps))
        minus = KernelSpec(gauss_spec.family, gauss_spec.windows, HyperParams.from_values(p.sigma_f, p.ell - h, p.sigma_eps))
        fd = (dense_matrix(plus, X) - dense_matrix(minus, X)) / (2 * h)
        assert_allclose(dense_matrix(gauss_spec, X, Operator.DELL), fd, atol=1e-6)
        K = dense_matrix(gauss_spec, X, Operator.K)
        assert_allclose(dense_matrix(gauss_spec, X, Operator.DSIGMA_F), 2 * K / p.sigma_f)
        assert_allclose(dense_matrix(gauss_spec, X, Operator.DSIGMA_EPS), 2 * p.sigma_eps * np.eye(20))

    def test_cap(self, gauss_spec, rng):
        with pytest.raises(ParameterError):
            dense_matrix(gauss_spec, rng.uniform(size=(30, 6)), cap=10)

    def test_cross_matrix_has_no_noise(self, gauss_spec, cube_data):
        X, _ = cube_data
        assert_allclose(cross_matrix(gauss_spec, X[:5], X[:5]), dense_matrix(gauss_spec, X[:5], Operator.K))

    def test_neg_log_likelihood_matches_slogdet(self, gauss_spec, cube_data):
        X, Y = cube_data
        K = dense_matrix(gauss_spec, X)
        expected = 0.5 * (Y @ np.linalg.solve(K, Y) + np.linalg.slogdet(K)[1] + len(Y) * np.log(2 * np.pi))
        assert dense_neg_log_likelihood(gauss_spec, X, Y) == pytest.approx(expected, rel=1e-10)
