"""Scikit-learn style regressor wrapping the from-scratch network.

Input standardization is fitted on the training data and then folded into
the first layer's weights, so the stored model consumes raw feature units
and serializes as a plain network.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from . import mlp, pipeline
from .errors import DomainError


def _fold_standardization(model: mlp.MlpModel, mean: np.ndarray, scale: np.ndarray) -> None:
    """Rewrite layer 0 so model(x) == model_std((x - mean) / scale).

    z = W (x - mean)/scale + b = (W/scale) x + (b - W mean/scale).
    """
    w0 = model.weights[0]
    model.biases[0] = model.biases[0] - w0 @ (mean / scale)
    model.weights[0] = w0 / scale[None, :]


class MlpRegressor(BaseEstimator, RegressorMixin):
    """Dense feed-forward regressor with fit/predict semantics.

    Parameters mirror the training pipeline: architecture, activation,
    initialization scheme, optimizer, batch size, epoch count, the geometric
    learning-rate ramp, and dropout. `standardize` controls whether inputs
    are z-scored during fitting (the transform is folded into the weights
    afterwards, so `predict` always takes raw features).
    """

    def __init__(
        self,
        hidden_layer_sizes: tuple[int, ...] = (100, 100, 100, 100),
        activation: str = "relu",
        init: str = "glorot_uniform",
        optimizer: str = "adam",
        batch_size: int = 1024,
        epochs: int = 200,
        learning_rate: float = 1e-3,
        learning_rate_final: float = 1e-5,
        schedule: str = "exponential",
        dropout: float = 0.0,
        standardize: bool = True,
        shuffle: bool = True,
        random_state: int = 0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.init = init
        self.optimizer = optimizer
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.learning_rate_final = learning_rate_final
        self.schedule = schedule
        self.dropout = dropout
        self.standardize = standardize
        self.shuffle = shuffle
        self.random_state = random_state

    def _schedule(self) -> mlp.LrSchedule:
        if self.schedule not in ("constant", "exponential"):
            raise DomainError(
                f"schedule must be 'constant' or 'exponential', got {self.schedule!r}"
            )
        return mlp.LrSchedule(
            self.schedule, eta=self.learning_rate, eta_final=self.learning_rate_final
        )

    def fit(self, X, y, X_val=None, y_val=None) -> "MlpRegressor":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2:
            raise DomainError("X must be a 2-d array")
        self._y_was_1d = y.ndim == 1
        y2 = y[:, None] if self._y_was_1d else y

        if self.standardize:
            mean = X.mean(axis=0)
            scale = X.std(axis=0)
            scale = np.where(scale > 0, scale, 1.0)
            X_fit = (X - mean) / scale
            X_val_fit = None if X_val is None else (np.asarray(X_val, float) - mean) / scale
        else:
            X_fit, X_val_fit = X, None if X_val is None else np.asarray(X_val, float)

        sizes = [X.shape[1], *self.hidden_layer_sizes, y2.shape[1]]
        model = mlp.init(sizes, self.activation, self.init, seed=self.random_state)
        config = pipeline.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            schedule=self._schedule(),
            seed=self.random_state,
            shuffle=self.shuffle,
            dropout=self.dropout,
        )
        model, history = pipeline.train(model, X_fit, y2, config, X_val_fit, y_val)
        if self.standardize:
            _fold_standardization(model, mean, scale)
        model.training_meta.update(
            {"standardized": self.standardize, "epochs": self.epochs,
             "optimizer": self.optimizer, "batch_size": self.batch_size}
        )
        self.model_ = model
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError("this MlpRegressor instance is not fitted yet")

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        pred = mlp.forward_batch(self.model_, np.asarray(X, dtype=float))
        return pred.ravel() if self._y_was_1d else pred

    def save(self, path) -> None:
        self._require_fitted()
        mlp.save_model(self.model_, path)

    @classmethod
    def from_file(cls, path) -> "MlpRegressor":
        """Inference-only reconstruction from a serialized network."""
        model = mlp.load_model(path)
        est = cls(hidden_layer_sizes=tuple(model.layer_sizes[1:-1]))
        est.model_ = model
        est.history_ = pipeline.TrainHistory()
        est.n_features_in_ = model.n_inputs
        est._y_was_1d = model.n_outputs == 1
        return est
