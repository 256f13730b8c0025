import numpy as np
import pytest
from numpy.testing import assert_allclose

from nfftgp.errors import ParameterError, ShapeError, SolverError
from nfftgp.fastsum import AdditiveMatvecEngine
from nfftgp.kernels import (FeatureWindows, HyperParams, KernelSpec, cross_matrix, dense_matrix, softplus,
                            softplus_inverse)
from nfftgp.train import (Adam, AdditiveGPRegressor, TrainConfig, adam_fit, grf_sample, initial_params,
                          predict, resolve_windows, rmse)


@pytest.fixture
def grf_1d():
    rng = np.random.default_rng(5)
    X = rng.uniform(0.0, 1.0, size=(120, 1))
    Y = grf_sample(X, "gaussian", 1.0, 0.1, 0.1, rng=rng)
    return X, Y


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.max_iter, cfg.n_probes, cfg.cg_iters, cfg.fill) == (0.01, 500, 10, 10, 100)
        assert cfg.family == "gaussian" and cfg.backend == "nfft"
        assert cfg.table_tol == 1e-4 and cfg.max_grid == 2 ** 16

    def test_family_alias_is_normalised(self):
        assert TrainConfig(family="matern").family == "matern12"

    @pytest.mark.parametrize("kwargs", [dict(backend="fmm"), dict(window_source="pca"), dict(lr=0.0),
                                        dict(max_iter=-1), dict(n_probes=0), dict(init_raw=(0.0,)),
                                        dict(sigma_f_mode="free"), dict(beta1=1.0),
                                        dict(table_tol=0.0), dict(max_grid=0)])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            TrainConfig(**kwargs)

    def test_budgets(self):
        cfg = TrainConfig(cg_iters=7, predict_cg_iters=70)
        assert cfg.budget().cg_iters == 7
        assert cfg.budget(prediction=True).cg_iters == 70


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = np.array([1.0, -2.0, 0.5])
        Adam(lr=0.1).step(params, np.array([3.0, -0.2, 1e-3]))
        assert_allclose(params, [0.9, -1.9, 0.4], atol=1e-5)

    def test_bias_corrected_moments(self):
        adam = Adam(lr=0.01, beta1=0.9, beta2=0.999, eps=0.0)
        params = np.zeros(1)
        grads = [np.array([1.0]), np.array([-2.0])]
        for g in grads:
            adam.step(params, g)
        m = (0.9 * 0.1 * 1.0 + 0.1 * -2.0) / (1 - 0.9 ** 2)
        v = (0.999 * 0.001 * 1.0 + 0.001 * 4.0) / (1 - 0.999 ** 2)
        assert params[0] == pytest.approx(-0.01 - 0.01 * m / np.sqrt(v))

    def test_minimizes_a_quadratic(self):
        adam = Adam(lr=0.05)
        x = np.array([3.0, -4.0])
        for _ in range(2000):
            adam.step(x, 2.0 * x)
        assert np.abs(x).max() < 0.1


class TestWindows:
    def test_explicit_windows_win(self, rng):
        X = rng.uniform(size=(20, 5))
        cfg = TrainConfig(windows=((0, 1), (4,)), window_source="mis", d_target=2)
        assert resolve_windows(X, X[:, 0], cfg).windows == ((0, 1), (4,))

    def test_low_dimension_default(self, rng):
        X = rng.uniform(size=(20, 2))
        assert resolve_windows(X, X[:, 0], TrainConfig()).windows == ((0, 1),)

    def test_high_dimension_needs_a_source(self, rng):
        X = rng.uniform(size=(20, 5))
        with pytest.raises(ParameterError):
            resolve_windows(X, X[:, 0], TrainConfig())

    def test_single_kernel_needs_exact_backend(self, rng):
        X = rng.uniform(size=(20, 5))
        with pytest.raises(ParameterError):
            resolve_windows(X, X[:, 0], TrainConfig(window_source="all"))
        windows = resolve_windows(X, X[:, 0], TrainConfig(window_source="all", backend="exact"))
        assert windows.windows == ((0, 1, 2, 3, 4),)

    def test_mis_source(self, rng):
        X = rng.standard_normal((300, 6))
        y = X[:, 4] + 0.01 * rng.standard_normal(300)
        windows = resolve_windows(X, y, TrainConfig(window_source="mis", d_target=1))
        assert windows.windows == ((4,),)

    def test_windows_file(self, tmp_path, rng):
        path = tmp_path / "w.txt"
        path.write_text("1,3\n2\n", encoding="utf-8")
        X = rng.uniform(size=(10, 4))
        assert resolve_windows(X, X[:, 0], TrainConfig(windows_file=str(path))).windows == ((0, 2), (1,))

    def test_fixed_sigma_f(self):
        params = initial_params(TrainConfig(sigma_f_mode="fixed"), 4)
        assert params.sigma_f == pytest.approx(0.5)
        assert params.raw[1:] == (0.0, 0.0)


class TestFit:
    def test_zero_iterations_returns_log2(self, grf_1d):
        X, Y = grf_1d
        params, trace = adam_fit(X, Y, TrainConfig(max_iter=0))
        assert_allclose(params.values, np.log(2.0))
        assert len(trace) == 0
        assert list(trace.to_frame().columns) == ["iter", "raw_sigma_f", "raw_ell", "raw_sigma_eps", "sigma_f",
                                                  "ell", "sigma_eps", "loss", "grad_norm", "seconds"]

    def test_training_lowers_the_loss(self, grf_1d):
        X, Y = grf_1d
        cfg = TrainConfig(backend="exact", max_iter=40, lr=0.05, n_probes=8, cg_iters=40, lanczos_steps=20,
                          landmarks_per_window=10, fill=20)
        params, trace = adam_fit(X, Y, cfg)
        frame = trace.to_frame()
        assert len(frame) == 40
        assert frame["loss"].iloc[-1] < frame["loss"].iloc[0]
        assert params.ell < np.log(2.0)
        assert_allclose(frame[["sigma_f", "ell", "sigma_eps"]].to_numpy(),
                        softplus(frame[["raw_sigma_f", "raw_ell", "raw_sigma_eps"]].to_numpy()))

    def test_fixed_mode_keeps_sigma_f(self, grf_1d):
        X, Y = grf_1d
        cfg = TrainConfig(backend="exact", max_iter=5, sigma_f_mode="fixed", fill=10)
        params, trace = adam_fit(X, Y, cfg)
        assert params.sigma_f == pytest.approx(1.0)
        assert len({r[0] for r in trace.raw}) == 1

    def test_matern_nfft_trace_tracks_exact(self, grf_1d):
        X, Y = grf_1d
        cfg = TrainConfig(family="matern12", max_iter=3, lr=0.05, n_probes=4, fill=20, seed=2)
        traces = {backend: np.array(adam_fit(X, Y, cfg.replace(backend=backend))[1].loss)
                  for backend in ("nfft", "exact")}
        assert_allclose(traces["nfft"], traces["exact"], rtol=1e-2)

    def test_same_seed_same_trace(self, grf_1d):
        X, Y = grf_1d
        cfg = TrainConfig(backend="exact", max_iter=3, fill=10, seed=11)
        a = adam_fit(X, Y, cfg)[1].loss
        b = adam_fit(X, Y, cfg)[1].loss
        assert a == b

    def test_solver_failure_carries_trace(self, grf_1d, monkeypatch):
        import nfftgp.train as train_module

        def broken(*args, **kwargs):
            raise SolverError("boom")

        monkeypatch.setattr(train_module, "loss_and_grad", broken)
        X, Y = grf_1d
        with pytest.raises(SolverError) as info:
            adam_fit(X, Y, TrainConfig(backend="exact", max_iter=3, fill=10))
        assert len(info.value.report) == 0

    def test_shape_check(self, grf_1d):
        X, Y = grf_1d
        with pytest.raises(ShapeError):
            adam_fit(X, Y[:-1], TrainConfig(max_iter=0))


class TestPredict:
    def test_exact_backend_matches_dense_posterior(self, grf_1d):
        X, Y = grf_1d
        X_test = np.linspace(0.05, 0.95, 15)[:, None]
        windows = FeatureWindows(((0,),))
        params = HyperParams.from_values(1.0, 0.1, 0.1)
        cfg = TrainConfig(backend="exact", predict_cg_iters=500, predict_cg_tol=1e-12, fill=20)
        pred = predict(params, windows, X, Y, X_test, cfg)
        spec = KernelSpec("gaussian", windows, params)
        K = dense_matrix(spec, X)
        Ks = cross_matrix(spec, X_test, X)
        assert_allclose(pred.mean, Ks @ np.linalg.solve(K, Y), atol=1e-7)
        var = 1.0 - np.einsum("ij,ji->i", Ks, np.linalg.solve(K, Ks.T))
        assert_allclose(pred.latent_var, var, atol=1e-7)
        assert_allclose(pred.noisy_var, pred.latent_var + params.sigma_eps ** 2)
        assert np.all(pred.lo95 < pred.mean) and np.all(pred.mean < pred.hi95)

    def test_nfft_backend_tracks_exact(self, grf_1d):
        X, Y = grf_1d
        X_test = np.linspace(0.0, 1.0, 11)[:, None]
        windows = FeatureWindows(((0,),))
        params = HyperParams.from_values(1.0, 0.1, 0.1)
        exact = predict(params, windows, X, Y, X_test, TrainConfig(backend="exact", predict_cg_iters=300, fill=20))
        fast = predict(params, windows, X, Y, X_test, TrainConfig(backend="nfft", m=64, predict_cg_iters=300, fill=20))
        assert_allclose(fast.mean, exact.mean, atol=1e-3)

    def test_variance_is_nonnegative_after_clamping(self, grf_1d, monkeypatch):
        original = AdditiveMatvecEngine.cross_block
        monkeypatch.setattr(AdditiveMatvecEngine, "cross_block", lambda self, X_test: 3.0 * original(self, X_test))
        X, Y = grf_1d
        params = HyperParams.from_values(1.0, 0.1, 0.1)
        cfg = TrainConfig(backend="exact", predict_cg_iters=300, fill=20)
        with pytest.warns(UserWarning, match="clamped"):
            pred = predict(params, FeatureWindows(((0,),)), X, Y, X[:40], cfg)
        assert pred.n_clamped == 40
        assert_allclose(pred.latent_var, 0.0)
        assert_allclose(pred.noisy_var, 0.01)

    def test_mean_only(self, grf_1d):
        X, Y = grf_1d
        cfg = TrainConfig(backend="exact", fill=10)
        pred = predict(HyperParams((0.0, 0.0, 0.0)), FeatureWindows(((0,),)), X, Y, X[:4], cfg, return_var=False)
        assert np.isnan(pred.latent_var).all()
        assert list(pred.to_frame().columns) == ["mean", "latent_var", "noisy_var", "lo95", "hi95"]

    def test_rmse(self):
        assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(np.sqrt(2.0))
        with pytest.raises(ShapeError):
            rmse([1.0], [1.0, 2.0])


class TestGRF:
    def test_zero_signal_is_pure_noise(self):
        X = np.linspace(0, 1, 25)[:, None]
        y = grf_sample(X, "matern12", 0.0, 0.3, 0.5, seed=3)
        rng = np.random.default_rng(3)
        rng.standard_normal(25)
        assert_allclose(y, 0.5 * rng.standard_normal(25))

    def test_seeded(self):
        X = np.linspace(0, 1, 30)[:, None]
        assert_allclose(grf_sample(X, "gaussian", 1.0, 0.2, 0.1, seed=1),
                        grf_sample(X, "gaussian", 1.0, 0.2, 0.1, seed=1))

    def test_sample_covariance(self):
        X = np.array([[0.0], [0.05], [0.8]])
        samples = np.array([grf_sample(X, "gaussian", 1.0, 0.1, 0.0, seed=s) for s in range(4000)])
        cov = np.cov(samples.T)
        expected = np.exp(-0.5 * ((X - X.T) / 0.1) ** 2)
        assert_allclose(cov, expected, atol=0.08)

    def test_cap(self):
        with pytest.raises(ParameterError):
            grf_sample(np.zeros((10, 1)), "gaussian", 1.0, 0.1, 0.1, cap=5)


class TestEstimator:
    def test_fit_predict_score(self, grf_1d):
        X, Y = grf_1d
        cfg = TrainConfig(backend="exact", max_iter=2, lr=0.01, fill=20, cg_iters=30,
                          init_raw=tuple(softplus_inverse(np.array([1.0, 0.1, 0.1]))))
        model = AdditiveGPRegressor(cfg).fit(X[:90], Y[:90])
        mean, std = model.predict(X[90:], return_std=True)
        assert mean.shape == std.shape == (30,)
        assert np.all(std >= 0)
        assert model.score(X[90:], Y[90:]) > 0.5
        lo, hi = model.predict_interval(X[90:])
        assert np.all(lo <= hi)
        assert set(model.hyperparameters_) == {"sigma_f", "ell", "sigma_eps"}

    def test_get_params_round_trip(self):
        model = AdditiveGPRegressor(TrainConfig(max_iter=3), windows=((0,),))
        assert model.get_params()["config"].max_iter == 3
