import json
import math

import numpy as np
import pytest

from stforecast.neural import (AdamState, CascadeNet, ConfigError, LstmLayer, NumericError, ShapeError,
                               StateError, TrainConfig, adam_step, as_sequence, check_lags,
                               gradient_check, load_cascade, make_windows, mse, read_checkpoint,
                               save_cascade, train)


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def _data(B=6, L=5, D=1, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(B, L, D)), rng.normal(size=B)


def test_dead_network_outputs_head_bias():
    net = CascadeNet(1, (3, 4), seed=1)
    for p in net.params().values():
        p[...] = 0.0
    net.head.b[...] = 0.37
    x, _ = _data()
    np.testing.assert_array_equal(net.forward(x), np.full(6, 0.37))


def test_inference_is_deterministic():
    net = CascadeNet(1, (3, 4), dropout=0.5, seed=2)
    x, _ = _data()
    np.testing.assert_array_equal(net.forward(x), net.forward(x))


def test_one_unit_lstm_matches_hand_unroll():
    net = CascadeNet(1, (1,), seed=0)
    layer = net.stack.layers[0]
    # gate order i, f, g, o
    wx = [0.5, -0.3, 0.8, 0.2]
    wh = [0.1, 0.4, -0.6, 0.7]
    b = [0.05, 1.0, -0.1, 0.3]
    layer.Wx[0] = wx
    layer.Wh[0] = wh
    layer.b[:] = b
    net.head.W[0, 0] = 1.7
    net.head.b[0] = -0.2
    xs = [0.9, -1.3]
    h = c = 0.0
    for xt in xs:
        z = [wx[k] * xt + wh[k] * h + b[k] for k in range(4)]
        i, f, g, o = _sig(z[0]), _sig(z[1]), math.tanh(z[2]), _sig(z[3])
        c = f * c + i * g
        h = o * math.tanh(c)
    expected = 1.7 * h - 0.2
    out = net.forward(np.array(xs).reshape(1, 2, 1))
    assert abs(out[0] - expected) < 1e-12


def test_zero_loss_gives_zero_head_gradient():
    net = CascadeNet(1, (3,), seed=3)
    x, _ = _data()
    y = net.forward(x)
    loss, grads = net.loss_and_grads(x, y)
    assert loss == 0.0
    assert not grads["head.W"].any() and not grads["head.b"].any()


def test_gradient_check_small_net():
    net = CascadeNet(2, (4, 5), seed=4)
    x, y = _data(B=4, L=3, D=2, seed=4)
    assert gradient_check(net, x, y) < 1e-4


def test_gradient_check_residual_net():
    net = CascadeNet(1, (3,), seed=5, residual=True)
    x, y = _data(B=3, L=4, seed=5)
    assert gradient_check(net, x, y) < 1e-4


def test_gradient_is_weighted_mean_over_batches():
    net = CascadeNet(1, (3, 4), seed=6)
    x, y = _data(B=7, seed=6)
    grad = lambda xs, ys: {k: g.copy() for k, g in net.loss_and_grads(xs, ys)[1].items()}  # noqa: E731
    full = grad(x, y)
    ga, gb = grad(x[:3], y[:3]), grad(x[3:], y[3:])
    for k in full:
        np.testing.assert_allclose(full[k], (3 * ga[k] + 4 * gb[k]) / 7, rtol=1e-10, atol=1e-15)


def test_block_inputs_equal_concatenated_input():
    rng = np.random.default_rng(7)
    layer = LstmLayer(5, 3, rng)
    x = rng.normal(size=(4, 6, 5))
    full = layer.forward(x)
    split = layer.forward([x[..., :2], x[..., 2:]], block_widths=[2, 3])
    np.testing.assert_allclose(split, full, rtol=0, atol=1e-14)
    # a missing block behaves like zeros
    zeros = x.copy()
    zeros[..., 2:] = 0.0
    np.testing.assert_allclose(layer.forward([x[..., :2], None], block_widths=[2, 3]),
                               layer.forward(zeros), atol=1e-14)


def test_layer_errors():
    layer = LstmLayer(2, 3)
    with pytest.raises(StateError):
        layer.backward(np.zeros((1, 1, 3)))
    with pytest.raises(ShapeError):
        layer.forward(np.zeros((1, 2, 3)))
    with pytest.raises(NumericError):
        layer.forward(np.full((1, 2, 2), np.nan))
    with pytest.raises(ConfigError):
        LstmLayer(0, 3)
    with pytest.raises(ShapeError):
        CascadeNet(1, (2,)).forward(np.zeros((2, 3)))


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_hand_formula():
    g = np.array([0.3, -2.0, 1e-9])
    p = {"w": np.zeros(3)}
    lr, eps = 0.01, 1e-8
    adam_step(p, {"w": g}, AdamState(), lr, eps=eps)
    # bias correction makes m_hat = g and v_hat = g^2 on the first step
    np.testing.assert_allclose(p["w"], -lr * g / (np.abs(g) + eps), rtol=1e-12)


def test_adam_later_steps_hand_formula():
    g1, g2 = np.array([0.5]), np.array([-0.2])
    p = {"w": np.zeros(1)}
    st = AdamState()
    adam_step(p, {"w": g1}, st, 0.1)
    adam_step(p, {"w": g2}, st, 0.1)
    m = 0.1 * 0.9 * 0.5 + 0.1 * -0.2
    v = 0.001 * 0.999 * 0.25 + 0.001 * 0.04
    step2 = 0.1 * (m / (1 - 0.9 ** 2)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert p["w"][0] == pytest.approx(-0.1 * 0.5 / (0.5 + 1e-8) - step2, rel=1e-12)


def test_adam_is_deterministic():
    g = {"w": np.array([0.3, -0.1])}
    outs = []
    for _ in range(2):
        p = {"w": np.ones(2)}
        st = AdamState()
        for _ in range(3):
            adam_step(p, g, st, 0.05)
        outs.append(p["w"].copy())
    np.testing.assert_array_equal(outs[0], outs[1])


def test_adam_rejects_bad_gradients():
    with pytest.raises(NumericError, match="w"):
        adam_step({"w": np.zeros(1)}, {"w": np.array([np.inf])}, AdamState(), 0.1)
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros(1)}, {"v": np.zeros(1)}, AdamState(), 0.1)


def test_make_windows_indexing():
    x = np.arange(1.0, 11.0)
    inputs, targets = make_windows(x, [2, 3])
    assert inputs[0].tolist() == [2.0, 1.0]
    assert targets[0] == 4.0
    assert len(targets) == len(x) - 3
    seq = as_sequence(inputs)
    assert seq.shape == (7, 2, 1) and seq[0, :, 0].tolist() == [1.0, 2.0]


def test_window_count_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(20):
        lags = sorted(set(rng.integers(2, 12, size=4).tolist()))
        n = int(rng.integers(15, 40))
        inputs, targets = make_windows(np.arange(n, dtype=float), lags)
        assert len(targets) == n - max(lags)
        assert all(inputs[k, j] == targets[k] - lags[j] for k in range(len(targets)) for j in range(len(lags)))


def test_lag_validation():
    with pytest.raises(ConfigError):
        make_windows(np.arange(10.0), [1, 2], skip_nearest=True)
    assert make_windows(np.arange(10.0), [1, 2], skip_nearest=False)[1][0] == 2.0
    for bad in ([], [0, 2], [2, 2]):
        with pytest.raises(ConfigError):
            check_lags(bad, False)


def test_train_config_validation_and_schedule():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})
    cfg = TrainConfig(learning_rate=0.01, decay=0.5, halve_every=2)
    assert cfg.lr_at(2, 3) == pytest.approx(0.01 / 2 * 0.5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def _fit_once(seed):
    series = np.sin(np.arange(200) * 2 * np.pi / 24) + 1.0
    inputs, targets = make_windows(series, range(2, 6))
    net = CascadeNet(1, (4, 6), dropout=0.1, seed=seed)
    hist = train(net, inputs, targets, TrainConfig(epochs=5, batch_size=32, seed=seed, lags=range(2, 6)))
    return net, hist


def test_training_is_bit_reproducible():
    (a, ha), (b, hb) = _fit_once(3), _fit_once(3)
    assert ha == hb
    for k, p in a.params().items():
        np.testing.assert_array_equal(p, b.params()[k])


def test_training_reduces_loss():
    series = np.sin(np.arange(400) * 2 * np.pi / 24) + 1.0
    inputs, targets = make_windows(series, range(2, 10))
    net = CascadeNet(1, (8, 8), seed=0)
    hist = train(net, inputs, targets, TrainConfig(epochs=40, batch_size=64, seed=0))
    assert len(hist) == 40
    assert hist[-1] < 0.05 * hist[0]
    assert mse(net.predict(as_sequence(inputs)), targets) < 0.01


def test_checkpoint_round_trip(tmp_path):
    net, _ = _fit_once(1)
    state = AdamState()
    adam_step(net.params(), {k: np.ones_like(v) for k, v in net.params().items()}, state, 1e-3)
    save_cascade(net, tmp_path / "c.json", state)
    back, st2 = load_cascade(tmp_path / "c.json")
    x = as_sequence(np.random.default_rng(0).random((5, 4)))
    np.testing.assert_array_equal(back.forward(x), net.forward(x))
    assert st2.t == 1
    for k in state.m:
        np.testing.assert_array_equal(st2.m[k], state.m[k])


def test_checkpoint_rejects_foreign_or_mismatched(tmp_path):
    (tmp_path / "x.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ConfigError):
        read_checkpoint(tmp_path / "x.json")
    net = CascadeNet(1, (2,))
    save_cascade(net, tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["params"]["head.W"]["shape"] = [3, 1]
    doc["params"]["head.W"]["data"] = [0.0, 0.0, 0.0]
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(ShapeError, match="head.W"):
        load_cascade(tmp_path / "c.json")
