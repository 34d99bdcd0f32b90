import math

import numpy as np
import pytest

from neuralvol import mlp, pipeline
from neuralvol.errors import DomainError, EmptyInput, NonFiniteLoss, ShapeMismatch
from neuralvol.sampling import generate_bs_dataset


@pytest.fixture(scope="module")
def small_bs_data():
    ds = generate_bs_dataset(2000, "wide", seed=3)
    return ds.inputs(), ds.outputs()


def quick_config(**overrides):
    defaults = dict(epochs=8, batch_size=256, optimizer="adam", seed=0)
    defaults.update(overrides)
    return pipeline.TrainConfig(**defaults)


def test_metrics_perfect_prediction():
    y = np.array([0.1, 0.5, 2.0, -1.0])
    report = pipeline.metrics_report(y, y)
    assert report.mse == 0.0
    assert report.mae == 0.0
    assert report.mape == 0.0
    assert report.r2 == 1.0
    assert report.max_abs_error == 0.0


def test_metrics_constant_mean_prediction_has_zero_r2():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    report = pipeline.metrics_report(y, np.full(4, y.mean()))
    assert report.r2 == pytest.approx(0.0)


def test_metrics_mape_excludes_near_zero_targets():
    y = np.array([1.0, 1e-12, 2.0])
    pred = np.array([1.1, 5.0, 1.8])
    report = pipeline.metrics_report(y, pred)
    assert report.mape_excluded == 1
    assert report.mape == pytest.approx((0.1 / 1.0 + 0.2 / 2.0) / 2)


def test_metrics_validation():
    with pytest.raises(EmptyInput):
        pipeline.metrics_report(np.array([]), np.array([]))
    with pytest.raises(ShapeMismatch):
        pipeline.metrics_report(np.zeros(3), np.zeros(4))


def test_train_reduces_loss_and_records_history(small_bs_data):
    X, y = small_bs_data
    model = mlp.init([4, 24, 24, 1], "relu", seed=0)
    model, history = pipeline.train(model, X, y, quick_config())
    assert len(history.train_loss) == 8
    assert len(history.val_loss) == 8
    assert history.train_loss[-1] < history.train_loss[0] * 0.5
    assert len(history.lr_per_step) == 8 * (1800 // 256)
    assert all(t >= 0 for t in history.epoch_seconds)


def test_train_is_deterministic(small_bs_data):
    X, y = small_bs_data
    runs = []
    for _ in range(2):
        model = mlp.init([4, 16, 1], "relu", seed=5)
        model, _ = pipeline.train(model, X, y, quick_config(epochs=3, seed=5))
        runs.append(mlp.forward_batch(model, X[:50]))
    assert np.array_equal(runs[0], runs[1])


def test_train_raises_on_divergence(small_bs_data):
    X, y = small_bs_data
    model = mlp.init([4, 16, 1], "relu", seed=0)
    config = pipeline.TrainConfig(
        epochs=5, batch_size=256, optimizer="sgd", seed=0,
        schedule=mlp.LrSchedule("constant", eta=1e12),
    )
    with pytest.raises(NonFiniteLoss) as excinfo:
        pipeline.train(model, X, y, config)
    assert excinfo.value.step >= 0


def test_history_csv_layout(tmp_path, small_bs_data):
    X, y = small_bs_data
    model = mlp.init([4, 8, 1], "relu", seed=0)
    _, history = pipeline.train(model, X, y, quick_config(epochs=3))
    path = tmp_path / "history.csv"
    history.export_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr"
    assert len(lines) == 4


def test_evaluate_returns_report(small_bs_data):
    X, y = small_bs_data
    model = mlp.init([4, 16, 1], "relu", seed=1)
    model, _ = pipeline.train(model, X, y, quick_config())
    report = pipeline.evaluate(model, X, y)
    assert report.n == len(X)
    assert report.rmse == pytest.approx(math.sqrt(report.mse))


def test_kfold_leave_one_out_boundary():
    X = np.linspace(0, 1, 5)[:, None]
    y = 2 * X
    candidate = pipeline.SearchCandidate(neurons=4, batch_size=2, hidden_layers=1)
    score = pipeline.kfold_cv(X, y, k=5, candidate=candidate, epochs=2, seed=0)
    assert math.isfinite(score)
    with pytest.raises(DomainError):
        pipeline.kfold_cv(X, y, k=6, candidate=candidate, epochs=2)
    with pytest.raises(DomainError):
        pipeline.kfold_cv(X, y, k=1, candidate=candidate, epochs=2)


def test_kfold_is_deterministic(small_bs_data):
    X, y = small_bs_data
    candidate = pipeline.SearchCandidate(neurons=8, batch_size=256, hidden_layers=2)
    a = pipeline.kfold_cv(X[:600], y[:600], 3, candidate, epochs=2, seed=1)
    b = pipeline.kfold_cv(X[:600], y[:600], 3, candidate, epochs=2, seed=1)
    assert a == b


def test_search_space_sampling_respects_bounds():
    space = pipeline.SearchSpace()
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = space.sample(rng)
        assert 200 <= c.neurons <= 600
        assert 256 <= c.batch_size <= 3000
        assert 0.0 <= c.dropout <= 0.2
        assert c.activation in space.activations
        assert c.init in space.inits
        assert c.optimizer in space.optimizers
        assert c.hidden_layers == 4


def test_random_search_ranks_and_summarizes(small_bs_data):
    X, y = small_bs_data
    space = pipeline.SearchSpace(
        neurons_range=(4, 8), batch_size_range=(256, 512), hidden_layers=1
    )
    ranked, summary = pipeline.random_search(
        space, trials=4, X=X[:600], y=y[:600], seed=0, k=2, epochs=2
    )
    scores = [r["score"] for r in ranked]
    assert scores == sorted(scores)
    assert 4 <= summary["neurons"] <= 8
    assert summary["activation"] in space.activations


def test_lr_range_test_flags_divergence(small_bs_data):
    X, y = small_bs_data
    model = mlp.init([4, 16, 1], "relu", seed=0)
    curve, steepest, divergence = pipeline.lr_range_test(
        model, X, y, eta_start=1e-6, eta_end=1e3, steps=40,
        optimizer="sgd", seed=0,
    )
    assert divergence is not None
    assert curve[0][0] == pytest.approx(1e-6)
    assert steepest < divergence
    # the ramp stops at the divergence point
    assert curve[-1][0] <= divergence


def test_lr_range_leaves_input_model_untouched(small_bs_data):
    X, y = small_bs_data
    model = mlp.init([4, 8, 1], "relu", seed=2)
    before = [w.copy() for w in model.weights]
    pipeline.lr_range_test(model, X, y, steps=15, seed=0)
    for w0, w1 in zip(before, model.weights):
        assert np.array_equal(w0, w1)


def test_data_size_study_shapes(small_bs_data):
    X, y = small_bs_data
    candidate = pipeline.SearchCandidate(neurons=8, batch_size=256, hidden_layers=1)
    results = pipeline.data_size_study(
        X[:1000], y[:1000], X[1000:1400], y[1000:1400],
        factors=(0.5, 1.0), base=800, repeats=2, candidate=candidate,
        epochs=2, seed=0,
    )
    assert set(results) == {0.5, 1.0}
    assert results[0.5]["size"] == 400
    assert results[1.0]["size"] == 800
    for r in results.values():
        assert r["mse_std"] >= 0
    with pytest.raises(DomainError):
        pipeline.data_size_study(
            X[:100], y[:100], X[:10], y[:10], factors=(1.0,), base=200,
            repeats=1, candidate=candidate, epochs=1,
        )


def test_iv_features_masks_sub_floor_rows():
    m = np.array([1.0, 1.2, 0.9])
    tau = np.array([0.5, 0.5, 0.5])
    r = np.zeros(3)
    # second price is exactly intrinsic: zero time value must be masked out
    price = np.array([0.05, 0.2, 0.01])
    feats, valid = pipeline.iv_features(m, tau, r, price)
    assert valid.tolist() == [True, False, True]
    assert feats.shape == (3, 4)
    assert feats[0, 3] == pytest.approx(np.log(0.05))
    assert np.all(np.isfinite(feats))


def test_bench_runs_methods_on_shared_suite():
    out = pipeline.bench_iv_methods(
        n=200, methods=("newton", "brent", "bisection"), warmup=0, runs=1
    )
    rows = {r["method"]: r for r in out["rows"]}
    assert set(rows) == {"newton", "brent", "bisection"}
    for r in rows.values():
        assert r["failures"] == 0
        assert r["mae"] < 1e-6
    assert (
        rows["bisection"]["total_function_evals"]
        > rows["brent"]["total_function_evals"]
    )
