import json
import math

import numpy as np
import pytest

from fiberforge import neuralnet as nn
from fiberforge.scaling import Scaler


def make_net(spec):
    """spec: list of (weights, biases, activation)."""
    return nn.Network([nn.Layer(np.array(w, float), np.array(b, float), a) for w, b, a in spec])


def net_221():
    return make_net([
        ([[0.5, -1.0], [1.5, 0.25]], [0.1, -0.2], "relu"),
        ([[2.0, -0.5]], [0.3], "linear"),
    ])


def meta_for(net, task="predict", seed=0):
    cfg = nn.NetworkConfig(input_dim=net.input_dim, output_dim=net.output_dim,
                           hidden_layers=len(net.layers) - 1, hidden_neurons=net.layers[0].weights.shape[0], seed=seed)
    return {"task": task, "config": cfg, "provenance": {"note": "test"}}


def scalers_for(net):
    return {
        "input": Scaler(tuple(f"x{i}" for i in range(net.input_dim)), np.zeros(net.input_dim), np.ones(net.input_dim)),
        "output": Scaler(tuple(f"y{i}" for i in range(net.output_dim)), np.arange(net.output_dim, dtype=float), np.full(net.output_dim, 2.0)),
    }


# -- config / init ---------------------------------------------------------

def test_config_defaults_are_table_values():
    cfg = nn.NetworkConfig(input_dim=3, output_dim=4)
    assert (cfg.hidden_layers, cfg.hidden_neurons, cfg.learning_rate, cfg.epochs, cfg.batch_size) == (4, 14, 0.001, 32, 20)
    assert (cfg.hidden_activation, cfg.output_activation, cfg.optimizer) == ("relu", "linear", "adam")


@pytest.mark.parametrize("bad", [dict(input_dim=0), dict(epochs=0), dict(learning_rate=0.0), dict(batch_size=-1),
                                 dict(hidden_activation="tanh"), dict(optimizer="rmsprop"), dict(seed=-1)])
def test_config_validation(bad):
    args = dict(input_dim=3, output_dim=4) | bad
    with pytest.raises(ValueError):
        nn.NetworkConfig(**args)


def test_predictive_topology():
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=4, seed=1))
    assert net.shapes == [(14, 3), (14, 14), (14, 14), (14, 14), (4, 14)]
    assert [l.activation for l in net.layers] == ["relu"] * 4 + ["linear"]
    assert all(np.all(l.biases == 0) for l in net.layers)


def test_design_topology():
    net = nn.init_network(nn.NetworkConfig(input_dim=4, output_dim=3, seed=1))
    assert net.shapes[0] == (14, 4) and net.shapes[-1] == (3, 14)


@pytest.mark.parametrize("n_in, n_out", [(3, 4), (4, 3), (1, 1), (7, 2)])
def test_parameter_count_formula(n_in, n_out):
    net = nn.init_network(nn.NetworkConfig(input_dim=n_in, output_dim=n_out))
    assert len(net.layers) == 5
    assert net.n_parameters() == n_in * 14 + 14 + 3 * (14 * 14 + 14) + 14 * n_out + n_out


def test_glorot_bounds():
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=4, seed=5))
    for l in net.layers:
        fan_out, fan_in = l.weights.shape
        assert np.abs(l.weights).max() <= math.sqrt(6 / (fan_in + fan_out))


def test_init_deterministic_bytes():
    cfg = nn.NetworkConfig(input_dim=3, output_dim=4, seed=99)
    a, b = nn.init_network(cfg), nn.init_network(cfg)
    assert nn.dumps_model(a, scalers_for(a), meta_for(a)) == nn.dumps_model(b, scalers_for(b), meta_for(b))
    c = nn.init_network(cfg.replace(seed=100))
    assert not np.array_equal(a.layers[0].weights, c.layers[0].weights)


def test_network_rejects_broken_chain():
    with pytest.raises(ValueError):
        make_net([([[1.0, 2.0]], [0.0], "relu"), ([[1.0, 1.0]], [0.0], "linear")])


# -- forward / loss ----------------------------------------------------------

def test_zero_weights_output_is_bias():
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=4))
    for l in net.layers:
        l.weights[:] = 0.0
    net.layers[-1].biases[:] = [1.0, -2.0, 3.0, 0.5]
    y, _ = nn.forward(net, [0.3, -7.0, 2.0])
    assert y.tolist() == [1.0, -2.0, 3.0, 0.5]


def test_relu_gating():
    net = make_net([([[1.0]], [0.0], "relu"), ([[1.0]], [0.0], "linear")])
    assert nn.forward(net, [2.0])[0].tolist() == [2.0]
    assert nn.forward(net, [-3.0])[0].tolist() == [0.0]


def test_221_forward_matches_oracle():
    # oracle: h = relu([-1.4, 1.8]) = [0, 1.8]; y = 2*0 - 0.5*1.8 + 0.3
    y, _ = nn.forward(net_221(), [1.0, 2.0])
    assert abs(y[0] - (-0.6000000000000001)) < 1e-12


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        nn.forward(net_221(), [1.0, 2.0, 3.0])


def test_batch_forward_equals_rowwise():
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=4, seed=2))
    X = np.random.default_rng(0).normal(size=(7, 3))
    rows = np.array([nn.predict(net, x) for x in X])
    np.testing.assert_allclose(nn.predict(net, X), rows, rtol=0, atol=1e-14)


@pytest.mark.parametrize("pred, target, expected", [([1.5, 2.0], [1.5, 2.0], 0.0), ([1, 1], [0, 0], 1.0), ([3], [1], 4.0)])
def test_mse_examples(pred, target, expected):
    assert nn.mse_loss(pred, target) == expected


def test_mse_length_mismatch():
    with pytest.raises(ValueError):
        nn.mse_loss([1, 2], [1])


# -- backward ----------------------------------------------------------------

def test_gradients_vanish_at_target():
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=4, seed=3))
    x = np.array([0.2, -0.4, 1.0])
    y, cache = nn.forward(net, x)
    for gw, gb in nn.backward(net, cache, y.copy()):
        assert not gw.any() and not gb.any()


def test_single_weight_linear_gradient():
    net = make_net([([[2.0]], [0.0], "linear")])
    _, cache = nn.forward(net, [1.0])
    (gw, gb), = nn.backward(net, cache, [0.0])
    assert gw[0, 0] == 4.0
    assert gb[0] == 4.0


def test_stale_cache_rejected():
    net = net_221()
    _, cache = nn.forward(net, [1.0, 2.0])
    grads = nn.backward(net, cache, [1.0])
    nn.optimizer_step(nn.init_optimizer(net), net, grads, 0.001)
    with pytest.raises(ValueError):
        nn.backward(net, cache, [1.0])
    with pytest.raises(ValueError):
        nn.backward(net_221(), nn.forward(net, [1.0, 2.0])[1], [1.0])


def test_backward_target_shape_checked():
    net = net_221()
    _, cache = nn.forward(net, [1.0, 2.0])
    with pytest.raises(ValueError):
        nn.backward(net, cache, [1.0, 2.0])


def central_difference_grads(net, x, t, eps=1e-6):
    out = []
    for p in net.parameters():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = nn.mse_loss(nn.predict(net, x), t)
            flat[k] = orig - eps
            down = nn.mse_loss(nn.predict(net, x), t)
            flat[k] = orig
            gflat[k] = (up - down) / (2 * eps)
        out.append(g)
    return out


def test_backward_matches_finite_differences_small_net():
    rng = np.random.default_rng(11)
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=2, hidden_layers=2, hidden_neurons=5, seed=4))
    for l in net.layers:
        l.biases[:] = rng.normal(scale=0.3, size=l.biases.shape)
    x, t = rng.normal(size=3), rng.normal(size=2)
    assert nn.kink_margin(net, x) > 1e-4
    _, cache = nn.forward(net, x)
    analytic = [g for pair in nn.backward(net, cache, t) for g in pair]
    numeric = central_difference_grads(net, x, t)
    for a, b in zip(analytic, numeric):
        rel = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)
        assert rel.max() < 1e-4


def test_batch_gradient_is_mean_of_sample_gradients():
    rng = np.random.default_rng(5)
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=4, seed=8))
    X, T = rng.normal(size=(6, 3)), rng.normal(size=(6, 4))
    batch = nn.backward(net, nn.forward(net, X)[1], T)
    per = [nn.backward(net, nn.forward(net, x)[1], t) for x, t in zip(X, T)]
    for i, (gw, gb) in enumerate(batch):
        np.testing.assert_allclose(gw, np.mean([p[i][0] for p in per], axis=0), atol=1e-14)
        np.testing.assert_allclose(gb, np.mean([p[i][1] for p in per], axis=0), atol=1e-14)


# -- optimizer -----------------------------------------------------------------

def test_zero_gradients_leave_parameters():
    net = net_221()
    before = [p.copy() for p in net.parameters()]
    zeros = [(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in net.layers]
    state = nn.init_optimizer(net)
    nn.optimizer_step(state, net, zeros, 0.001)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))
    assert state.step == 1


@pytest.mark.parametrize("g", [3.7, -0.02, 1e4])
def test_adam_first_step_moves_by_lr(g):
    net = make_net([([[1.0]], [0.0], "linear")])
    nn.optimizer_step(nn.init_optimizer(net), net, [(np.array([[g]]), np.array([0.0]))], 0.001)
    assert abs((net.layers[0].weights[0, 0] - 1.0) + 0.001 * math.copysign(1, g)) < 1e-8


def test_adam_scalar_quadratic():
    net = make_net([([[0.0]], [0.0], "linear")])
    state = nn.init_optimizer(net)
    for _ in range(200):
        w = net.layers[0].weights[0, 0]
        nn.optimizer_step(state, net, [(np.array([[2 * (w - 3.0)]]), np.array([0.0]))], 0.1)
    assert abs(net.layers[0].weights[0, 0] - 3.0) < 0.1


def test_adam_one_step_matches_oracle():
    # values from a scalar pure-Python evaluation of the same step (target 1.0 at x = [1, 2])
    net = net_221()
    _, cache = nn.forward(net, [1.0, 2.0])
    nn.optimizer_step(nn.init_optimizer(net), net, nn.backward(net, cache, [1.0]), 0.001)
    expected = [[0.5, -1.0], [1.49900000000625, 0.249000000003125]], [0.1, -0.20099999999375], \
        [[2.0, -0.4990000000017361]], [0.300999999996875]
    got = net.layers[0].weights, net.layers[0].biases, net.layers[1].weights, net.layers[1].biases
    for e, g in zip(expected, got):
        np.testing.assert_allclose(g, e, rtol=0, atol=1e-12)


def test_optimizer_shape_mismatch():
    net = net_221()
    with pytest.raises(ValueError):
        nn.optimizer_step(nn.init_optimizer(net), net, [(np.zeros((2, 2)), np.zeros(2))], 0.001)
    with pytest.raises(ValueError):
        nn.optimizer_step(nn.init_optimizer(net), net, [(np.zeros((2, 3)), np.zeros(2)), (np.zeros((1, 2)), np.zeros(1))], 0.001)


def test_sgd_step():
    net = make_net([([[1.0]], [0.5], "linear")])
    nn.sgd_step(net, [(np.array([[2.0]]), np.array([1.0]))], 0.1)
    assert net.layers[0].weights[0, 0] == 0.8 and net.layers[0].biases[0] == 0.4


# -- training ------------------------------------------------------------------

def linear_data(n=200):
    x = np.linspace(-1, 1, n).reshape(-1, 1)
    return x, 2 * x + 1


def test_curve_length_equals_epochs():
    x, y = linear_data()
    cfg = nn.NetworkConfig(input_dim=1, output_dim=1, seed=1)
    curve = nn.train(nn.init_network(cfg), x, y, cfg)
    assert len(curve) == 32 and len(curve.validation_loss) == 32
    assert all(v >= 0 for v in curve.training_loss + curve.validation_loss)


def test_linear_target_loss_decreases():
    x, y = linear_data()
    cfg = nn.NetworkConfig(input_dim=1, output_dim=1, seed=1)
    curve = nn.train(nn.init_network(cfg), x, y, cfg)
    assert curve.training_loss[-1] < curve.training_loss[0]


def test_large_batch_gives_one_step_per_epoch(monkeypatch):
    calls = []
    real = nn.optimizer_step
    monkeypatch.setattr(nn, "optimizer_step", lambda *a: (calls.append(1), real(*a)))
    x, y = linear_data(50)
    cfg = nn.NetworkConfig(input_dim=1, output_dim=1, epochs=3, batch_size=1000)
    nn.train(nn.init_network(cfg), x, y, cfg)
    assert len(calls) == 3


def test_short_final_batch_is_kept(monkeypatch):
    calls = []
    real = nn.optimizer_step
    monkeypatch.setattr(nn, "optimizer_step", lambda *a: (calls.append(1), real(*a)))
    x, y = linear_data(50)  # 40 training rows -> batches of 15, 15, 10
    cfg = nn.NetworkConfig(input_dim=1, output_dim=1, epochs=2, batch_size=15)
    nn.train(nn.init_network(cfg), x, y, cfg)
    assert len(calls) == 6


def test_training_is_deterministic():
    x, y = linear_data()
    cfg = nn.NetworkConfig(input_dim=1, output_dim=1, seed=21, batch_size=7)
    a, b = nn.init_network(cfg), nn.init_network(cfg)
    ca, cb = nn.train(a, x, y, cfg), nn.train(b, x, y, cfg)
    assert ca.training_loss == cb.training_loss
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


def test_sgd_option_trains():
    x, y = linear_data()
    cfg = nn.NetworkConfig(input_dim=1, output_dim=1, seed=1, optimizer="sgd", learning_rate=0.05)
    curve = nn.train(nn.init_network(cfg), x, y, cfg)
    assert curve.training_loss[-1] < curve.training_loss[0]


@pytest.mark.parametrize("n, frac", [(1, 0.2), (10, 0.0), (10, 1.0)])
def test_train_rejects_bad_split(n, frac):
    cfg = nn.NetworkConfig(input_dim=1, output_dim=1)
    with pytest.raises(ValueError):
        nn.train(nn.init_network(cfg), np.zeros((n, 1)), np.zeros((n, 1)), cfg, frac)


def test_non_finite_loss_raises():
    x, y = linear_data()
    cfg = nn.NetworkConfig(input_dim=1, output_dim=1, optimizer="sgd", learning_rate=1e200)
    with pytest.raises(nn.NonFiniteLossError):
        with np.errstate(all="ignore"):
            nn.train(nn.init_network(cfg), x, y * 1e100, cfg)


# -- serialization -------------------------------------------------------------

def test_save_load_save_identical(tmp_path):
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=4, seed=17))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    nn.save_model(net, scalers_for(net), meta_for(net), a)
    net2, sc2, meta2 = nn.load_model(a)
    nn.save_model(net2, sc2, meta2, b)
    assert a.read_bytes() == b.read_bytes()
    assert meta2["task"] == "predict" and meta2["config"].seed == 0


def test_loaded_forward_bit_exact(tmp_path):
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=4, seed=17))
    for l in net.layers:
        l.biases[:] = np.random.default_rng(1).normal(size=l.biases.shape)
    path = tmp_path / "m.json"
    nn.save_model(net, scalers_for(net), meta_for(net), path)
    loaded, _, _ = nn.load_model(path)
    for x in np.random.default_rng(2).normal(size=(100, 3)):
        assert np.array_equal(nn.predict(net, x), nn.predict(loaded, x))


def test_file_fields(tmp_path):
    net = net_221()
    path = tmp_path / "m.json"
    nn.save_model(net, scalers_for(net), meta_for(net, task="design"), path)
    doc = json.loads(path.read_text())
    assert set(doc) >= {"format_version", "task", "config", "scalers", "layers"}
    assert doc["layers"][0] == {"rows": 2, "cols": 2, "weights": [0.5, -1.0, 1.5, 0.25], "biases": [0.1, -0.2], "activation": "relu"}
    assert doc["config"]["learning_rate"] == 0.001 and doc["config"]["epochs"] == 32


def _edited(tmp_path, edit):
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=4, seed=1))
    path = tmp_path / "m.json"
    nn.save_model(net, scalers_for(net), meta_for(net), path)
    doc = json.loads(path.read_text())
    edit(doc)
    path.write_text(json.dumps(doc))
    return path


def test_load_rejects_edited_dims(tmp_path):
    path = _edited(tmp_path, lambda d: d["layers"][1].update(rows=13))
    with pytest.raises(nn.ModelFormatError, match="layer 1"):
        nn.load_model(path)


def test_load_rejects_chain_break(tmp_path):
    def edit(d):
        d["layers"][1].update(cols=7, weights=d["layers"][1]["weights"][:98])
    with pytest.raises(nn.ModelFormatError, match="inconsistent"):
        nn.load_model(_edited(tmp_path, edit))


def test_load_rejects_version(tmp_path):
    with pytest.raises(nn.ModelFormatError, match="format_version"):
        nn.load_model(_edited(tmp_path, lambda d: d.update(format_version=99)))


def test_load_rejects_truncated(tmp_path):
    net = net_221()
    path = tmp_path / "m.json"
    nn.save_model(net, scalers_for(net), meta_for(net), path)
    path.write_text(path.read_text()[:120])
    with pytest.raises(nn.ModelFormatError, match="JSON"):
        nn.load_model(path)


def test_load_rejects_scaler_mismatch(tmp_path):
    def edit(d):
        d["scalers"]["input"] = {"names": ["a"], "mean": [0.0], "std": [1.0]}
    with pytest.raises(nn.ModelFormatError, match="scaler"):
        nn.load_model(_edited(tmp_path, edit))


# -- grad check ----------------------------------------------------------------

def test_grad_check_linear_single_parameter():
    net = make_net([([[2.0]], [0.0], "linear")])
    assert nn.grad_check(net, ([1.0], [0.0]), 1e-6) < 1e-10


def test_grad_check_table_topology():
    rng = np.random.default_rng(3)
    net = nn.init_network(nn.NetworkConfig(input_dim=3, output_dim=4, seed=12))
    x = rng.normal(size=3)
    assert nn.kink_margin(net, x) > 1e-4
    assert nn.grad_check(net, (x, rng.normal(size=4)), 1e-6) < 1e-4


def test_kink_sample_detected():
    # pre-activation of the hidden unit is exactly 0: excluded from the tolerance claim
    net = make_net([([[1.0]], [0.0], "relu"), ([[1.0]], [0.0], "linear")])
    assert nn.kink_margin(net, [0.0]) == 0.0


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        nn.grad_check(net_221(), ([1.0, 2.0], [0.0]), 0.0)
