"""Feed-forward implied-volatility surrogate, trained and evaluated in numpy.

Architecture: inputs (model and curve parameters, maturity, strike) pass
through a per-feature min-max scaling, four hidden layers of 64 ELU nodes and
an identity output returning the implied volatility. Training minimizes the
MSE (reported as RMSE) with Adam on mini-batches, early stopping on a
validation fold held out at parameter-set granularity, and restores the best
validation weights. Forward passes and exact reverse-mode input gradients are
hard-coded in numpy so calibration needs no ML framework.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = ["SurrogateNet", "TrainingDivergedError", "elu", "elu_prime"]


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


def elu(x):
    """ELU activation: x for x >= 0, exp(x) - 1 below."""
    return np.where(x >= 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_prime(x):
    return np.where(x >= 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


def _forward_scaled(xs, weights, biases):
    a = xs
    for W, b in zip(weights[:-1], biases[:-1]):
        a = elu(a @ W + b)
    return a @ weights[-1] + biases[-1]


class SurrogateNet(BaseEstimator, RegressorMixin):
    """Pointwise pricing-map approximator with a scikit-learn interface.

    Parameters
    ----------
    hidden_layers, hidden_units : int
        Network shape (default 4 x 64).
    learning_rate, beta_1, beta_2, epsilon : float
        Adam settings (Keras defaults).
    batch_size : int
        Mini-batch size.
    max_epochs : int
        Hard cap on training epochs (default 500).
    patience : int
        Early-stopping patience on validation RMSE (default 50).
    validation_fraction : float
        Fraction of parameter sets held out for validation, in (0, 0.5).
    random_state : int or None
        Seed for weight init and batch shuffling; fixed seed gives
        bit-identical training runs.
    """

    def __init__(
        self,
        hidden_layers=4,
        hidden_units=64,
        learning_rate=1e-3,
        beta_1=0.9,
        beta_2=0.999,
        epsilon=1e-7,
        batch_size=1024,
        max_epochs=500,
        patience=50,
        validation_fraction=0.1,
        random_state=None,
    ):
        self.hidden_layers = hidden_layers
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    # ------------------------------------------------------------------ #
    # training
    # ------------------------------------------------------------------ #

    def _check_config(self):
        if not 0.0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5)")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")

    def _init_layers(self, d_in, rng):
        dims = [d_in] + [self.hidden_units] * self.hidden_layers + [1]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return dims, weights, biases

    def _scale(self, X):
        return (X - self.scale_min_) / self.scale_span_

    def fit(self, X, y, groups=None, feature_names=None, metadata=None):
        """Train on quadruplet features ``X`` and implied vols ``y``.

        ``groups`` (one id per record) keeps whole surfaces inside a single
        train/validation fold so strikes of one surface never leak across.
        Without groups each record is its own group.
        """
        self._check_config()
        X = check_array(X, dtype=float)
        y = check_array(y, dtype=float, ensure_2d=False)
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("features and targets must be finite")
        if X.shape[0] != y.shape[0] or X.shape[0] == 0:
            raise ValueError("X and y must be non-empty with matching length")
        n, d_in = X.shape
        groups = np.arange(n) if groups is None else np.asarray(groups)

        rng = np.random.default_rng(self.random_state)
        self.scale_min_ = X.min(axis=0)
        span = X.max(axis=0) - self.scale_min_
        self.scale_span_ = np.where(span > 0, span, 1.0)

        uniq = np.unique(groups)
        n_val_groups = max(int(np.ceil(self.validation_fraction * uniq.size)), 1)
        val_groups = rng.choice(uniq, size=n_val_groups, replace=False)
        val_mask = np.isin(groups, val_groups)
        if val_mask.all() or not val_mask.any():
            raise ValueError("validation split left one side empty; provide more groups")

        Xs = self._scale(X)
        X_tr, y_tr = Xs[~val_mask], y[~val_mask]
        X_va, y_va = Xs[val_mask], y[val_mask]

        self.layer_dims_, weights, biases = self._init_layers(d_in, rng)
        m_w = [np.zeros_like(W) for W in weights]
        v_w = [np.zeros_like(W) for W in weights]
        m_b = [np.zeros_like(b) for b in biases]
        v_b = [np.zeros_like(b) for b in biases]

        best_val = np.inf
        best = None
        history = []
        t_step = 0
        n_tr = X_tr.shape[0]
        for epoch in range(1, self.max_epochs + 1):
            order = rng.permutation(n_tr)
            sq_sum = 0.0
            for start in range(0, n_tr, self.batch_size):
                idx = order[start : start + self.batch_size]
                xb, yb = X_tr[idx], y_tr[idx]
                # forward pass keeping pre-activations
                zs, acts = [], [xb]
                a = xb
                for W, b in zip(weights[:-1], biases[:-1]):
                    z = a @ W + b
                    zs.append(z)
                    a = elu(z)
                    acts.append(a)
                out = (a @ weights[-1] + biases[-1]).ravel()
                err = out - yb
                sq_sum += float(err @ err)
                # backward
                delta = (2.0 / xb.shape[0]) * err[:, None]
                grads_w = [None] * len(weights)
                grads_b = [None] * len(biases)
                grads_w[-1] = acts[-1].T @ delta
                grads_b[-1] = delta.sum(axis=0)
                back = delta @ weights[-1].T
                for layer in range(len(weights) - 2, -1, -1):
                    back = back * elu_prime(zs[layer])
                    grads_w[layer] = acts[layer].T @ back
                    grads_b[layer] = back.sum(axis=0)
                    if layer:
                        back = back @ weights[layer].T
                # Adam update, fixed layer order
                t_step += 1
                corr1 = 1.0 - self.beta_1**t_step
                corr2 = 1.0 - self.beta_2**t_step
                for i in range(len(weights)):
                    m_w[i] = self.beta_1 * m_w[i] + (1 - self.beta_1) * grads_w[i]
                    v_w[i] = self.beta_2 * v_w[i] + (1 - self.beta_2) * grads_w[i] ** 2
                    weights[i] -= self.learning_rate * (m_w[i] / corr1) / (
                        np.sqrt(v_w[i] / corr2) + self.epsilon
                    )
                    m_b[i] = self.beta_1 * m_b[i] + (1 - self.beta_1) * grads_b[i]
                    v_b[i] = self.beta_2 * v_b[i] + (1 - self.beta_2) * grads_b[i] ** 2
                    biases[i] -= self.learning_rate * (m_b[i] / corr1) / (
                        np.sqrt(v_b[i] / corr2) + self.epsilon
                    )
            train_rmse = float(np.sqrt(sq_sum / n_tr))
            val_out = _forward_scaled(X_va, weights, biases).ravel()
            val_rmse = float(np.sqrt(np.mean((val_out - y_va) ** 2)))
            if not np.isfinite(train_rmse) or not np.isfinite(val_rmse):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            history.append({"epoch": epoch, "train_rmse": train_rmse, "val_rmse": val_rmse})
            if val_rmse < best_val:
                best_val = val_rmse
                best = ([W.copy() for W in weights], [b.copy() for b in biases], epoch)
            elif epoch - best[2] >= self.patience:
                break

        self.weights_, self.biases_, self.best_epoch_ = best
        self.n_epochs_ = history[-1]["epoch"]
        self.history_ = history
        self.best_val_rmse_ = best_val
        self.n_features_in_ = d_in
        self.feature_names_ = (
            tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(d_in))
        )
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(X).tobytes())
        digest.update(np.ascontiguousarray(y).tobytes())
        self.metadata_ = {
            "seed": self.random_state,
            "dataset_sha256": digest.hexdigest(),
            "n_records": int(n),
            "best_epoch": int(self.best_epoch_),
            "stopped_epoch": int(self.n_epochs_),
            "train_rmse": history[self.best_epoch_ - 1]["train_rmse"],
            "val_rmse": best_val,
        }
        if metadata:
            self.metadata_.update(metadata)
        return self

    # ------------------------------------------------------------------ #
    # inference
    # ------------------------------------------------------------------ #

    def predict(self, X):
        """Implied vol for each input row."""
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return _forward_scaled(self._scale(X), self.weights_, self.biases_).ravel()

    def is_extrapolating(self, X):
        """True per row when any feature leaves the scaled training box."""
        check_is_fitted(self, "weights_")
        Xs = self._scale(check_array(X, dtype=float))
        return np.any((Xs < 0.0) | (Xs > 1.0), axis=1)

    def input_gradient(self, X):
        """Exact gradient of the output w.r.t. every raw input, row by row.

        Reverse-mode through the affine layers, ELU and the input scaling;
        returns an array of the same shape as ``X``.
        """
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        a = self._scale(X)
        zs = []
        for W, b in zip(self.weights_[:-1], self.biases_[:-1]):
            z = a @ W + b
            zs.append(z)
            a = elu(z)
        back = np.repeat(self.weights_[-1].T, X.shape[0], axis=0)  # (n, width)
        for layer in range(len(self.weights_) - 2, -1, -1):
            back = back * elu_prime(zs[layer])
            back = back @ self.weights_[layer].T
        return back / self.scale_span_

    # ------------------------------------------------------------------ #
    # persistence
    # ------------------------------------------------------------------ #

    FILE_FORMAT = "roughvol-net-v1"

    def save(self, path):
        """Self-describing JSON weights file; forward output is bit-stable across a round trip."""
        check_is_fitted(self, "weights_")
        payload = {
            "format": self.FILE_FORMAT,
            "layer_dims": list(self.layer_dims_),
            "weights": [W.tolist() for W in self.weights_],
            "biases": [b.tolist() for b in self.biases_],
            "scale_min": self.scale_min_.tolist(),
            "scale_span": self.scale_span_.tolist(),
            "feature_names": list(self.feature_names_),
            "config": {
                "hidden_layers": self.hidden_layers,
                "hidden_units": self.hidden_units,
                "learning_rate": self.learning_rate,
                "beta_1": self.beta_1,
                "beta_2": self.beta_2,
                "epsilon": self.epsilon,
                "batch_size": self.batch_size,
                "max_epochs": self.max_epochs,
                "patience": self.patience,
                "validation_fraction": self.validation_fraction,
                "random_state": self.random_state,
            },
            "metadata": self.metadata_,
        }
        path = Path(path)
        with open(path, "w") as fh:
            json.dump(payload, fh)
            fh.write("\n")
        return path

    @classmethod
    def load(cls, path, expected_features=None):
        """Rebuild a fitted estimator from :meth:`save` output.

        ``expected_features`` (a name tuple or count) guards against loading
        weights trained for a different model into the wrong consumer.
        """
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format") != cls.FILE_FORMAT:
            raise ValueError(f"unsupported weights file format {payload.get('format')!r}")
        net = cls(**payload["config"])
        net.layer_dims_ = list(payload["layer_dims"])
        net.weights_ = [np.asarray(W, dtype=float) for W in payload["weights"]]
        net.biases_ = [np.asarray(b, dtype=float) for b in payload["biases"]]
        net.scale_min_ = np.asarray(payload["scale_min"], dtype=float)
        net.scale_span_ = np.asarray(payload["scale_span"], dtype=float)
        net.feature_names_ = tuple(payload["feature_names"])
        net.metadata_ = dict(payload.get("metadata", {}))
        net.n_features_in_ = net.layer_dims_[0]
        for W, b, d_in, d_out in zip(
            net.weights_, net.biases_, net.layer_dims_[:-1], net.layer_dims_[1:]
        ):
            if W.shape != (d_in, d_out) or b.shape != (d_out,):
                raise ValueError("weights file is inconsistent with its declared layer dims")
        if expected_features is not None:
            if isinstance(expected_features, int):
                if net.n_features_in_ != expected_features:
                    raise ValueError(
                        f"weights expect {net.n_features_in_} features, caller expects {expected_features}"
                    )
            elif tuple(expected_features) != net.feature_names_:
                raise ValueError(
                    f"weights were trained for features {net.feature_names_}, "
                    f"caller expects {tuple(expected_features)}"
                )
        return net
