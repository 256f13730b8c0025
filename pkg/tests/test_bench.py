import numpy as np
import pytest

from nfftgp import bench
from nfftgp.errors import ParameterError
from nfftgp.train import TrainConfig, grf_sample


def test_matvec_bench_rows():
    frame = bench.matvec_bench([100, 200], ell=0.2, config=TrainConfig(m=32), seed=1)
    assert list(frame.columns) == ["n", "backend", "max_rel_err", "seconds"]
    assert len(frame) == 4
    assert set(frame["backend"]) == {0, 1}
    assert (frame.loc[frame["backend"] == 1, "max_rel_err"] < 1e-4).all()
    assert (frame.loc[frame["backend"] == 0, "max_rel_err"] == 0).all()


def test_repeated_trials_rows(rng):
    X = rng.uniform(size=(60, 1))
    Y = grf_sample(X, "gaussian", 1.0, 0.2, 0.1, rng=rng)
    cfg = TrainConfig(backend="exact", max_iter=2, fill=10, seed=5)
    frame = bench.repeated_trials(X[:45], Y[:45], X[45:], Y[45:], cfg, trials=3)
    assert list(frame.columns) == ["trial", "seed", "rmse", "final_loss"]
    assert list(frame["trial"]) == [0, 1, 2]
    assert list(frame["seed"]) == [5, 6, 7]
    assert np.isfinite(frame["final_loss"]).all()
    summary = bench.trial_summary(frame)
    assert len(summary) == 1
    assert summary["trials"].iloc[0] == 3 and summary["first_seed"].iloc[0] == 5
    assert summary["rmse_mean"].iloc[0] == pytest.approx(frame["rmse"].mean())
    assert summary["rmse_std"].iloc[0] == pytest.approx(frame["rmse"].std(ddof=1))


def test_repeated_trials_without_steps_drops_loss(rng):
    X = rng.uniform(size=(40, 1))
    Y = grf_sample(X, "gaussian", 1.0, 0.2, 0.1, rng=rng)
    cfg = TrainConfig(backend="exact", max_iter=0, fill=10)
    frame = bench.repeated_trials(X[:30], Y[:30], X[30:], Y[30:], cfg, trials=1)
    assert list(frame.columns) == ["trial", "seed", "rmse"]
    assert bench.trial_summary(frame)["rmse_std"].iloc[0] == 0.0


def test_repeated_trials_needs_a_trial(rng):
    with pytest.raises(ParameterError):
        bench.repeated_trials(np.zeros((3, 1)), np.zeros(3), np.zeros((1, 1)), np.zeros(1), TrainConfig(), 0)


def test_precond_bench_dataset_check():
    with pytest.raises(ParameterError):
        bench.precond_bench("sine_exp")


@pytest.mark.slow
def test_precond_bench_counts():
    frame, spectra = bench.precond_bench("discs", ell_grid=[1.0, 3.0], rank=30, fill=20, maxit=500)
    assert list(frame.columns) == ["ell", "cg_iters", "pcg_iters"]
    assert (frame["pcg_iters"] <= frame["cg_iters"]).all()
    assert spectra is None


@pytest.mark.slow
def test_variance_bench_shape():
    frame = bench.variance_bench(replications=2, max_iters=2, rank=20, fill=10, n_probes=2)
    assert len(frame) == 4
    assert set(frame["precond"]) == {0, 1}
    assert (frame["loss_var"] >= 0).all()


def test_precond_bench_reuses_one_exact_engine(monkeypatch):
    built = []
    original = TrainConfig.engine

    def counting(self, spec, X, *args, **kwargs):
        built.append(self.backend)
        return original(self, spec, X, *args, **kwargs)

    monkeypatch.setattr(TrainConfig, "engine", counting)
    frame, _ = bench.precond_bench("discs", ell_grid=[1.0, 10.0], rank=30, fill=10, maxit=300)
    assert built == ["exact"]
    assert list(frame["ell"]) == [1.0, 10.0]
    assert (frame["pcg_iters"] <= frame["cg_iters"]).all()
    assert frame["pcg_iters"].iloc[1] < frame["cg_iters"].iloc[1]
