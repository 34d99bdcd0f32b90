import json
import math
import zlib

import numpy as np
import pytest

from neuralvol import mlp
from neuralvol.errors import DomainError, FormatError, ShapeMismatch


def finite_difference_grads(model, X, Y, h=1e-6):
    """Central finite differences of the batch MSE for every parameter."""
    grad_w = [np.zeros_like(w) for w in model.weights]
    grad_b = [np.zeros_like(b) for b in model.biases]
    for l in range(len(model.weights)):
        for arr, out in ((model.weights[l], grad_w[l]), (model.biases[l], grad_b[l])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                up = mlp.loss_mse(mlp.forward_batch(model, X), Y)
                arr[idx] = orig - h
                dn = mlp.loss_mse(mlp.forward_batch(model, X), Y)
                arr[idx] = orig
                out[idx] = (up - dn) / (2 * h)
    return grad_w, grad_b


@pytest.mark.parametrize("activation", ["relu", "sigmoid", "tanh", "elu", "leaky_relu"])
def test_backprop_matches_finite_differences(activation):
    rng = np.random.default_rng(zlib.crc32(activation.encode()))
    model = mlp.init([3, 6, 5, 2], activation, "glorot_uniform", seed=1)
    X = rng.normal(size=(7, 3))
    Y = rng.normal(size=(7, 2))
    got_w, got_b = mlp.backprop(model, X, Y)
    want_w, want_b = finite_difference_grads(model, X, Y)
    for g, w in zip(got_w + got_b, want_w + want_b):
        # norm-based comparison: a pointwise ratio explodes on entries whose
        # gradient happens to be near zero
        rel = np.linalg.norm(g - w) / max(np.linalg.norm(w), 1e-12)
        assert rel < 1e-6


def test_forward_batch_consistent_with_single():
    model = mlp.init([4, 8, 1], "tanh", seed=2)
    X = np.random.default_rng(0).normal(size=(5, 4))
    batch = mlp.forward_batch(model, X)
    for i in range(5):
        assert np.allclose(batch[i], mlp.forward(model, X[i]))


def test_activation_values():
    z = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    assert np.allclose(mlp._activate("relu", z), [0, 0, 0, 0.5, 2.0])
    assert np.allclose(mlp._activate("leaky_relu", z), [-0.02, -0.005, 0, 0.5, 2.0])
    assert np.allclose(mlp._activate("sigmoid", z), 1 / (1 + np.exp(-z)))
    assert np.allclose(mlp._activate("elu", z)[0], math.expm1(-2.0))
    assert np.allclose(mlp._activate("identity", z), z)


def test_init_schemes_and_bias_zeroing():
    glorot = mlp.init([10, 20, 1], "relu", "glorot_uniform", seed=0)
    limit = math.sqrt(6.0 / 30.0)
    assert np.abs(glorot.weights[0]).max() <= limit
    he = mlp.init([10, 20, 1], "relu", "he_uniform", seed=0)
    assert np.abs(he.weights[0]).max() <= math.sqrt(6.0 / 10.0)
    flat = mlp.init([10, 20, 1], "relu", "uniform", seed=0)
    assert np.abs(flat.weights[0]).max() <= 0.05
    for model in (glorot, he, flat):
        assert all(np.all(b == 0) for b in model.biases)


def test_init_string_activation_broadcast():
    model = mlp.init([2, 4, 4, 1], "relu", seed=0)
    assert model.activations == ["relu", "relu", "identity"]


def test_init_validation():
    with pytest.raises(DomainError):
        mlp.init([4], "relu")
    with pytest.raises(DomainError):
        mlp.init([4, 0, 1], "relu")
    with pytest.raises(DomainError):
        mlp.init([4, 8, 1], "swish")
    with pytest.raises(DomainError):
        mlp.init([4, 8, 1], "relu", scheme="orthogonal")


def test_model_shape_validation():
    with pytest.raises(ShapeMismatch):
        mlp.MlpModel(
            layer_sizes=[2, 3],
            activations=["identity"],
            weights=[np.zeros((4, 2))],
            biases=[np.zeros(3)],
        )


def test_sgd_step_direction():
    model = mlp.init([1, 1], "identity", "uniform", seed=0)
    X = np.array([[1.0]])
    Y = np.array([[5.0]])
    before = mlp.loss_mse(mlp.forward_batch(model, X), Y)
    opt = mlp.make_optimizer("sgd", model)
    for _ in range(50):
        grads = mlp.backprop(model, X, Y)
        mlp.step(model, grads, opt, 0.1)
    after = mlp.loss_mse(mlp.forward_batch(model, X), Y)
    assert after < before * 1e-3


def test_adam_first_step_is_signed_lr():
    # with bias correction, step one moves each parameter by ~lr * sign(g)
    model = mlp.init([2, 1], "identity", "glorot_uniform", seed=4)
    X = np.array([[0.3, -1.2], [1.0, 0.4]])
    Y = np.array([[2.0], [-1.0]])
    grads = mlp.backprop(model, X, Y)
    before = model.weights[0].copy()
    opt = mlp.make_optimizer("adam", model)
    mlp.step(model, grads, opt, 1e-3)
    moved = before - model.weights[0]
    assert np.allclose(moved, 1e-3 * np.sign(grads[0][0]), atol=1e-6)


def test_rmsprop_reduces_loss():
    rng = np.random.default_rng(8)
    model = mlp.init([3, 16, 1], "tanh", seed=8)
    X = rng.normal(size=(64, 3))
    Y = (X.sum(axis=1, keepdims=True)) ** 2 / 10
    opt = mlp.make_optimizer("rmsprop", model)
    start = mlp.loss_mse(mlp.forward_batch(model, X), Y)
    for _ in range(500):
        mlp.step(model, mlp.backprop(model, X, Y), opt, 1e-3)
    assert mlp.loss_mse(mlp.forward_batch(model, X), Y) < start * 0.2


def test_dropout_only_in_training_mode():
    model = mlp.init([4, 50, 50, 1], "relu", seed=0)
    X = np.random.default_rng(1).normal(size=(8, 4))
    plain = mlp.forward_batch(model, X)
    # no rng means inference mode regardless of the rate
    _, activs, masks = mlp._forward_cached(model, X, dropout_rate=0.5, rng=None)
    assert np.array_equal(activs[-1], plain)
    assert all(m is None for m in masks)
    rng = np.random.default_rng(2)
    _, _, masks = mlp._forward_cached(model, X, dropout_rate=0.5, rng=rng)
    assert masks[0] is not None and masks[1] is not None
    assert masks[-1] is None  # never on the output layer
    kept = masks[0] > 0
    assert 0.2 < kept.mean() < 0.8
    assert np.allclose(masks[0][kept], 2.0)  # inverted scaling by 1/keep


def test_schedule_values():
    const = mlp.LrSchedule("constant", eta=1e-3)
    assert mlp.lr_at(const, 12345) == 1e-3

    step = mlp.LrSchedule("step_decay", eta=1e-2, factor=0.5, every_n_epochs=10)
    assert mlp.lr_at(step, 0, steps_per_epoch=5) == 1e-2
    assert mlp.lr_at(step, 50, steps_per_epoch=5) == 0.5e-2  # epoch 10
    assert mlp.lr_at(step, 100, steps_per_epoch=5) == 0.25e-2

    expo = mlp.LrSchedule("exponential", eta=1e-3, eta_final=1e-5, total_steps=100)
    assert mlp.lr_at(expo, 0) == pytest.approx(1e-3)
    assert mlp.lr_at(expo, 50) == pytest.approx(1e-4)
    assert mlp.lr_at(expo, 100) == pytest.approx(1e-5)
    assert mlp.lr_at(expo, 500) == pytest.approx(1e-5)  # clamped past the end

    tri = mlp.LrSchedule("cyclical", eta=1e-3, eta_final=1e-5, cycle_len=200)
    assert mlp.lr_at(tri, 0) == pytest.approx(1e-5)
    assert mlp.lr_at(tri, 100) == pytest.approx(1e-3)
    assert mlp.lr_at(tri, 200) == pytest.approx(1e-5)
    assert mlp.lr_at(tri, 50) == pytest.approx((1e-5 + 1e-3) / 2)


def test_schedule_validation():
    with pytest.raises(DomainError):
        mlp.LrSchedule("polynomial")
    with pytest.raises(DomainError):
        mlp.LrSchedule("constant", eta=0.0)
    with pytest.raises(DomainError):
        mlp.LrSchedule("cyclical", eta=1e-5, eta_final=1e-3)


def test_serialization_round_trip_is_bit_exact(tmp_path):
    model = mlp.init([4, 30, 30, 2], "elu", "he_uniform", seed=9)
    X = np.random.default_rng(3).normal(size=(16, 4))
    path = tmp_path / "model.json"
    mlp.save_model(model, path)
    loaded = mlp.load_model(path)
    assert loaded.layer_sizes == model.layer_sizes
    assert loaded.activations == model.activations
    assert np.array_equal(mlp.forward_batch(loaded, X), mlp.forward_batch(model, X))
    for a, b in zip(loaded.weights, model.weights):
        assert np.array_equal(a, b)


def test_load_rejects_bad_files(tmp_path):
    garbage = tmp_path / "garbage.json"
    garbage.write_text("not json {")
    with pytest.raises(FormatError):
        mlp.load_model(garbage)

    model = mlp.init([2, 3, 1], "relu", seed=0)
    path = tmp_path / "model.json"
    mlp.save_model(model, path)
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        mlp.load_model(path)
    doc["format_version"] = 1
    del doc["weights"]
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        mlp.load_model(path)


def test_copy_is_independent():
    model = mlp.init([2, 4, 1], "relu", seed=0)
    clone = model.copy()
    clone.weights[0][0, 0] += 1.0
    assert model.weights[0][0, 0] != clone.weights[0][0, 0]
