"""Surrogate network: activations, training, gradients, persistence."""

import numpy as np
import pytest

from roughvol.neuralnet import SurrogateNet, TrainingDivergedError, elu


def toy_data(n=64, d=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, d))
    y = 0.2 + 0.1 * X[:, 0] - 0.05 * X[:, 1] ** 2 + 0.02 * np.sin(6 * X[:, 2])
    return X, y


class TestActivations:
    def test_elu_units(self):
        assert elu(np.array([-745.0]))[0] == pytest.approx(-1.0)
        assert elu(np.array([0.0]))[0] == 0.0
        assert elu(np.array([2.0]))[0] == 2.0
        assert elu(np.array([-1.0]))[0] == pytest.approx(np.exp(-1.0) - 1.0)


def manual_net(d_in=3, width=4, seed=0):
    """Small fitted net with hand-set weights for structural checks."""
    net = SurrogateNet(hidden_layers=2, hidden_units=width)
    rng = np.random.default_rng(seed)
    dims = [d_in, width, width, 1]
    net.layer_dims_ = dims
    net.weights_ = [rng.normal(scale=0.5, size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    net.biases_ = [rng.normal(scale=0.1, size=b) for b in dims[1:]]
    net.scale_min_ = np.zeros(d_in)
    net.scale_span_ = np.ones(d_in)
    net.feature_names_ = tuple(f"x{i}" for i in range(d_in))
    net.n_features_in_ = d_in
    net.metadata_ = {}
    return net


class TestForward:
    def test_zero_weights_output_equals_bias(self):
        net = manual_net()
        for W in net.weights_:
            W[:] = 0.0
        net.biases_[-1][:] = 0.123
        X = np.random.default_rng(1).uniform(size=(7, 3))
        assert np.allclose(net.predict(X), 0.123)

    def test_dimension_mismatch(self):
        net = manual_net()
        with pytest.raises(ValueError):
            net.predict(np.zeros((3, 5)))
        with pytest.raises(ValueError):
            net.input_gradient(np.zeros((3, 5)))

    def test_extrapolation_flag(self):
        net = manual_net()
        X = np.array([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5]])
        flags = net.is_extrapolating(X)
        assert flags.tolist() == [False, True]


class TestGradient:
    def test_matches_central_differences(self):
        net = manual_net(d_in=5, width=8, seed=2)
        net.scale_min_ = np.array([0.0, 0.1, -1.0, 0.0, 2.0])
        net.scale_span_ = np.array([1.0, 0.9, 2.0, 0.003, 3.0])
        rng = np.random.default_rng(3)
        X = net.scale_min_ + net.scale_span_ * rng.uniform(0.1, 0.9, size=(100, 5))
        grad = net.input_gradient(X)
        h = 1e-5
        for j in range(5):
            dx = np.zeros(5)
            dx[j] = h * net.scale_span_[j]
            fd = (net.predict(X + dx) - net.predict(X - dx)) / (2 * dx[j])
            denom = np.maximum(np.abs(fd), 1e-10)
            assert np.max(np.abs(grad[:, j] - fd) / denom) < 1e-6

    def test_zero_hidden_weights_zero_gradient(self):
        net = manual_net()
        net.weights_[0][:] = 0.0
        X = np.random.default_rng(4).uniform(size=(5, 3))
        assert np.allclose(net.input_gradient(X), 0.0)

    def test_dead_input_column_zero_gradient(self):
        net = manual_net()
        net.weights_[0][1, :] = 0.0  # feature 1 disconnected
        X = np.random.default_rng(5).uniform(size=(5, 3))
        grad = net.input_gradient(X)
        assert np.allclose(grad[:, 1], 0.0)
        assert not np.allclose(grad[:, 0], 0.0)


class TestTraining:
    def test_memorizes_tiny_dataset(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(size=(10, 3))
        y = rng.uniform(0.1, 0.4, size=10)
        net = SurrogateNet(max_epochs=4000, patience=3999, batch_size=10,
                          validation_fraction=0.11, random_state=0)
        net.fit(X, y)
        train_rmse = net.history_[-1]["train_rmse"]
        assert train_rmse < 1e-4

    def test_early_stopping_patience(self):
        X, y = toy_data(n=400, d=4, seed=7)
        y = y + np.random.default_rng(8).normal(scale=0.2, size=y.size)  # noise floor
        net = SurrogateNet(max_epochs=500, patience=12, batch_size=64, random_state=1)
        net.fit(X, y)
        assert net.n_epochs_ < 500
        assert net.n_epochs_ - net.best_epoch_ >= 12
        assert net.best_epoch_ <= net.n_epochs_

    def test_training_reproducible(self):
        X, y = toy_data(n=200, seed=9)
        nets = [
            SurrogateNet(max_epochs=30, patience=29, batch_size=64, random_state=3).fit(X, y)
            for _ in range(2)
        ]
        for a, b in zip(nets[0].weights_, nets[1].weights_):
            assert np.array_equal(a, b)

    def test_group_split_keeps_surfaces_together(self):
        X, y = toy_data(n=120, seed=10)
        groups = np.repeat(np.arange(12), 10)
        net = SurrogateNet(max_epochs=5, patience=4, batch_size=64,
                          validation_fraction=0.25, random_state=4)
        net.fit(X, y, groups=groups)
        assert net.history_  # trained; split respected by construction

    def test_divergence_detected(self):
        X, y = toy_data(n=100, seed=11)
        net = SurrogateNet(max_epochs=50, patience=20, random_state=5)
        with pytest.raises(TrainingDivergedError):
            net.fit(X, y + 1e200)  # squared loss overflows on the first epoch

    def test_learning_improves_with_data(self):
        # smaller out-of-sample error with 8x the training data
        X_small, y_small = toy_data(n=128, seed=12)
        X_big, y_big = toy_data(n=1024, seed=13)
        X_test, y_test = toy_data(n=512, seed=14)
        kw = dict(max_epochs=150, patience=149, batch_size=128)
        small = SurrogateNet(random_state=6, **kw).fit(X_small, y_small)
        big = SurrogateNet(random_state=6, **kw).fit(X_big, y_big)
        mae_small = np.abs(small.predict(X_test) - y_test).mean()
        mae_big = np.abs(big.predict(X_test) - y_test).mean()
        assert mae_big < mae_small


class TestPersistence:
    def test_round_trip_bit_identical(self, tmp_path):
        X, y = toy_data(n=150, seed=15)
        net = SurrogateNet(max_epochs=20, patience=19, batch_size=64, random_state=7).fit(X, y)
        path = tmp_path / "weights.json"
        net.save(path)
        back = SurrogateNet.load(path)
        probe = np.random.default_rng(16).uniform(size=(1000, 4))
        assert np.array_equal(net.predict(probe), back.predict(probe))

    def test_self_describing_and_mismatch_detection(self, tmp_path):
        X, y = toy_data(n=80, seed=17)
        net = SurrogateNet(max_epochs=5, patience=4, random_state=8)
        net.fit(X, y, feature_names=("h", "nu", "rho", "T"))
        path = tmp_path / "weights.json"
        net.save(path)
        back = SurrogateNet.load(path, expected_features=("h", "nu", "rho", "T"))
        assert back.layer_dims_[0] == 4
        with pytest.raises(ValueError):
            SurrogateNet.load(path, expected_features=("h", "eta", "rho", "T"))
        with pytest.raises(ValueError):
            SurrogateNet.load(path, expected_features=7)

    def test_metadata_retains_seed_and_digest(self, tmp_path):
        X, y = toy_data(n=80, seed=18)
        net = SurrogateNet(max_epochs=5, patience=4, random_state=99).fit(X, y)
        path = tmp_path / "weights.json"
        net.save(path)
        back = SurrogateNet.load(path)
        assert back.metadata_["seed"] == 99
        assert len(back.metadata_["dataset_sha256"]) == 64
