import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nfftgp import precond
from nfftgp.errors import ParameterError, ShapeError, SolverError
from nfftgp.kernels import FeatureWindows, HyperParams, KernelSpec, dense_matrix


def _dense(apply, n):
    return np.column_stack([apply(e) for e in np.eye(n)])


class TestFarthestPointSampling:
    @pytest.mark.parametrize("seed", range(5))
    def test_greedy_maximin(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(size=(12, 2))
        picked = precond.fps(pts, 12)
        centroid_dist = np.linalg.norm(pts - pts.mean(axis=0), axis=1)
        assert picked[0] == int(np.argmax(centroid_dist))
        assert sorted(picked) == list(range(12))
        for t in range(1, 12):
            chosen = picked[:t]
            rest = [i for i in range(12) if i not in chosen]
            min_dist = {i: np.linalg.norm(pts[chosen] - pts[i], axis=1).min() for i in rest}
            assert min_dist[picked[t]] == pytest.approx(max(min_dist.values()))

    def test_ties_go_to_lowest_index(self):
        pts = np.array([[-1.0], [1.0], [0.0], [3.0], [-3.0]])
        assert precond.fps(pts, 4) == [3, 4, 2, 0]

    def test_bad_k(self):
        with pytest.raises(ParameterError):
            precond.fps(np.zeros((3, 1)), 4)

    def test_landmarks_are_deduplicated(self, cube_data, windows6):
        X, _ = cube_data
        landmarks = precond.select_landmarks(X, windows6, 10)
        assert len(set(landmarks.tolist())) == len(landmarks)
        assert 10 <= len(landmarks) <= 20
        assert_array_equal(landmarks[:10], precond.fps(X[:, :3], 10))


class TestPatterns:
    def test_rows_are_lower_triangular_and_end_on_the_diagonal(self, cube_data, windows6):
        X, _ = cube_data
        patterns = precond.fsai_patterns(X, windows6, 5)
        for i, J in enumerate(patterns):
            assert J[-1] == i
            assert len(J) == min(5, i + 1)
            assert np.all(J[:-1] < i)

    def test_nearest_earlier_rows(self):
        X = np.array([[0.0], [10.0], [1.0], [2.0]])
        patterns = precond.fsai_patterns(X, FeatureWindows(((0,),)), 3)
        assert_array_equal(patterns[3], [0, 2, 3])

    def test_singular_local_system_raises_solver_error(self):
        with pytest.raises(SolverError, match="singular"):
            precond._fsai_row(np.array([0, 1]), np.ones((2, 2)), np.zeros((3, 2)))


class TestAafn:
    def test_inverse_is_spd(self, cube_data, gauss_spec):
        X, _ = cube_data
        M = precond.build(gauss_spec, X, k_per_window=5, fill=8)
        Minv = _dense(M.apply_inverse, len(X))
        assert_allclose(Minv, Minv.T, atol=1e-10)
        assert np.linalg.eigvalsh(Minv).min() > 0

    def test_factors_compose_to_the_inverse(self, cube_data, gauss_spec):
        X, _ = cube_data
        n = len(X)
        M = precond.build(gauss_spec, X, k_per_window=5, fill=8)
        Cinv = _dense(M.apply_factor_inverse, n)
        assert_allclose(_dense(M.apply_factor_inverse_t, n), Cinv.T, atol=1e-10)
        assert_allclose(Cinv.T @ Cinv, _dense(M.apply_inverse, n), atol=1e-8)

    def test_logdet_matches_dense(self, cube_data, matern_spec):
        X, _ = cube_data
        M = precond.build(matern_spec, X, k_per_window=4, fill=6)
        dense_M = np.linalg.inv(_dense(M.apply_inverse, len(X)))
        assert M.logdet() == pytest.approx(np.linalg.slogdet(dense_M)[1], abs=1e-8)

    def test_full_pattern_reproduces_khat(self, cube_data, gauss_spec):
        X, _ = cube_data
        n = len(X)
        M = precond.build(gauss_spec, X, k_per_window=5, fill=n)
        K = dense_matrix(gauss_spec, X)
        assert_allclose(_dense(M.apply_inverse, n) @ K, np.eye(n), atol=1e-7)
        assert M.logdet() == pytest.approx(np.linalg.slogdet(K)[1], abs=1e-7)

    def test_logdet_decomposition(self, rng, windows6):
        X = rng.uniform(size=(50, 6))
        for _ in range(10):
            sf, ell, se = rng.uniform(0.3, 1.5), rng.uniform(0.1, 1.0), rng.uniform(0.1, 0.5)
            spec = KernelSpec("gaussian", windows6, HyperParams.from_values(sf, ell, se))
            K = dense_matrix(spec, X)
            M = precond.build(spec, X, k_per_window=5, fill=10)
            C_inv = _dense(M.apply_factor_inverse, 50)
            inner = np.linalg.eigvalsh(C_inv @ K @ C_inv.T)
            gap = np.linalg.slogdet(K)[1] - M.logdet() - np.log(inner).sum()
            assert abs(gap) <= 1e-8

    def test_parallel_build_matches_serial(self, cube_data, gauss_spec):
        X, _ = cube_data
        v = np.random.default_rng(3).standard_normal(len(X))
        serial = precond.build(gauss_spec, X, 5, 8, n_jobs=1)
        threaded = precond.build(gauss_spec, X, 5, 8, n_jobs=2)
        assert_allclose(serial.apply_inverse(v), threaded.apply_inverse(v))

    def test_all_points_landmarks(self, gauss_spec, rng):
        X = rng.uniform(size=(6, 6))
        M = precond.build(gauss_spec, X, k_per_window=6, fill=3)
        assert M.k == 6
        K = dense_matrix(gauss_spec, X)
        assert_allclose(M.apply_inverse(K @ np.ones(6)), np.ones(6), atol=1e-9)

    def test_shape_checks(self, cube_data, gauss_spec):
        X, _ = cube_data
        M = precond.build(gauss_spec, X, 3, 4)
        with pytest.raises(ShapeError):
            M.apply_inverse(np.ones(3))
        with pytest.raises(ParameterError):
            precond.build(gauss_spec, X, 0, 4)


class TestIdentity:
    def test_identity_protocol(self):
        M = precond.IdentityPrecond(4)
        v = np.arange(4.0)
        for apply in (M.apply_inverse, M.apply_factor_inverse, M.apply_factor_inverse_t):
            assert_array_equal(apply(v), v)
        assert M.logdet() == 0.0
