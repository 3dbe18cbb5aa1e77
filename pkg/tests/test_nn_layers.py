"""Layer blocks: LSTM against a straight-line reference, batch norm moments,
checkpoint round-trips, composite-block gradient checks."""

import numpy as np
import pytest

from conftest import finite_difference_check
from trajkit.errors import MalformedInput, ShapeMismatch
from trajkit.nn.checkpoint import load_checkpoint, parameter_element_count, save_checkpoint
from trajkit.nn.layers import BatchNorm1d, Linear, LSTMCell, MapMLP, Module
from trajkit.nn.tensor import Tensor


def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_reference(x_seq, w_ih, w_hh, b, h0, c0):
    """Independent plain-numpy LSTM; gate order (i, f, g, o)."""
    h, c = h0.copy(), c0.copy()
    hd = h.shape[1]
    for t in range(x_seq.shape[1]):
        gates = x_seq[:, t, :] @ w_ih + h @ w_hh + b
        i = np_sigmoid(gates[:, :hd])
        f = np_sigmoid(gates[:, hd : 2 * hd])
        g = np.tanh(gates[:, 2 * hd : 3 * hd])
        o = np_sigmoid(gates[:, 3 * hd :])
        c = f * c + i * g
        h = o * np.tanh(c)
    return h, c


def test_lstm_zero_params_and_inputs_fixed_point(rng):
    cell = LSTMCell(3, 4, rng)
    for p in cell.parameters():
        p.data = np.zeros_like(p.data)
    h, c = cell.zero_state(2)
    h2, c2 = cell(Tensor(np.zeros((2, 3))), h, c)
    assert np.all(h2.data == 0.0) and np.all(c2.data == 0.0)


def test_lstm_single_step_equals_one_step_unroll(rng):
    cell = LSTMCell(3, 5, rng)
    x = Tensor(rng.normal(size=(2, 3)))
    h0, c0 = cell.zero_state(2)
    h1, c1 = cell(x, h0, c0)
    h1b, c1b = cell(x, *cell.zero_state(2))
    np.testing.assert_array_equal(h1.data, h1b.data)
    np.testing.assert_array_equal(c1.data, c1b.data)


def test_lstm_matches_reference_on_random_sequence(rng):
    cell = LSTMCell(3, 6, rng)
    x_seq = rng.normal(size=(4, 5, 3))
    h, c = cell.zero_state(4)
    for t in range(5):
        h, c = cell(Tensor(x_seq[:, t, :]), h, c)
    h_ref, c_ref = lstm_reference(
        x_seq, cell.w_ih.data, cell.w_hh.data, cell.bias.data,
        np.zeros((4, 6)), np.zeros((4, 6)))
    np.testing.assert_allclose(h.data, h_ref, atol=1e-10)
    np.testing.assert_allclose(c.data, c_ref, atol=1e-10)


def test_lstm_shape_mismatch(rng):
    cell = LSTMCell(3, 4, rng)
    h, c = cell.zero_state(2)
    with pytest.raises(ShapeMismatch):
        cell(Tensor(np.zeros((2, 5))), h, c)


def test_grad_lstm_block(rng):
    """Composite gradient check: 5-step LSTM over random configs."""
    worst = 0.0
    for trial in range(20):
        r = np.random.default_rng(trial)
        cell = LSTMCell(2, 3, r)
        x_seq = r.normal(size=(2, 5, 2))

        def build():
            h, c = cell.zero_state(2)
            for t in range(5):
                h, c = cell(Tensor(x_seq[:, t, :]), h, c)
            return h.mean()

        worst = max(worst, finite_difference_check(build, cell.parameters()))
    assert worst < 1e-4


def test_batchnorm_train_moments(rng):
    bn = BatchNorm1d(6)
    x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(64, 6)))
    out = bn(x)
    assert np.abs(out.data.mean(axis=0)).max() < 1e-6
    assert np.abs(out.data.var(axis=0) - 1.0).max() < 1e-4


def test_batchnorm_eval_uses_running_stats(rng):
    bn = BatchNorm1d(3)
    for _ in range(200):
        bn(Tensor(rng.normal(loc=1.0, scale=2.0, size=(32, 3))))
    bn.eval()
    x = rng.normal(loc=1.0, scale=2.0, size=(1000, 3))
    out = bn(Tensor(x))
    expected = (x - bn._buffers["running_mean"]) / np.sqrt(bn._buffers["running_var"] + bn.eps)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_grad_batchnorm_train_mode(rng):
    for trial in range(20):
        r = np.random.default_rng(100 + trial)
        bn = BatchNorm1d(4)
        x = Tensor(r.normal(size=(6, 4)), requires_grad=True)
        finite_difference_check(lambda: bn(x).mean(), [x, bn.gamma, bn.beta])


def randomize_biases(module: Module, r: np.random.Generator, scale: float = 0.1):
    """Random-config helper: zero biases put dropped-out rows exactly on ReLU
    kinks where finite differences are undefined."""
    for name, p in module.named_parameters():
        if name.endswith(("bias", "beta")):
            p.data = p.data + r.normal(0.0, scale, size=p.data.shape)


def test_grad_map_mlp(rng):
    for trial in range(20):
        r = np.random.default_rng(200 + trial)
        mlp = MapMLP(6, 5, r, drop_p=0.3)
        randomize_biases(mlp, r)
        x = Tensor(r.normal(size=(4, 6)), requires_grad=True)
        finite_difference_check(
            lambda: mlp(x, np.random.default_rng(trial)).mean(),
            [x] + mlp.parameters())


def test_module_names_are_unique_and_hierarchical(rng):
    class Net(Module):
        def __init__(self):
            super().__init__()
            self.fc = Linear(2, 3, rng)
            self.blocks = [Linear(3, 3, rng), Linear(3, 1, rng)]

    net = Net()
    names = [n for n, _ in net.named_parameters()]
    assert len(names) == len(set(names))
    assert "fc.weight" in names and "blocks.1.bias" in names


def test_checkpoint_round_trip(tmp_path, rng):
    class Net(Module):
        def __init__(self, seed):
            super().__init__()
            r = np.random.default_rng(seed)
            self.fc = Linear(4, 3, r)
            self.bn = BatchNorm1d(3)

    net = Net(0)
    net.bn._buffers["running_mean"][:] = [1.0, 2.0, 3.0]
    save_checkpoint(net, tmp_path / "ckpt")

    other = Net(99)
    load_checkpoint(other, tmp_path / "ckpt")
    np.testing.assert_array_equal(other.fc.weight.data, net.fc.weight.data)
    np.testing.assert_array_equal(other.bn._buffers["running_mean"],
                                  net.bn._buffers["running_mean"])
    assert parameter_element_count(tmp_path / "ckpt") == net.num_parameters()


def test_checkpoint_rejects_truncated_buffer(tmp_path, rng):
    class Net(Module):
        def __init__(self):
            super().__init__()
            self.fc = Linear(4, 3, rng)

    net = Net()
    save_checkpoint(net, tmp_path / "ckpt")
    blob = (tmp_path / "ckpt.bin").read_bytes()
    (tmp_path / "ckpt.bin").write_bytes(blob[:-8])
    with pytest.raises(MalformedInput):
        load_checkpoint(Net(), tmp_path / "ckpt")
