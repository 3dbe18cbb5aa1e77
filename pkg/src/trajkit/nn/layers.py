"""Neural building blocks on top of the autodiff tensor.

Modules own named parameters (and non-trainable buffers such as batch-norm
running statistics); submodules are discovered through attributes so
``named_parameters`` yields stable hierarchical names for checkpoints.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, add, dropout, matmul, mul, pow_scalar, relu, sigmoid, sub, tanh


class Module:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self.training = True

    def register_parameter(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def register_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = np.asarray(value)
        return self._buffers[name]

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, t in self._params.items():
            yield prefix + name, t
        for child_name, child in self._children():
            yield from child.named_parameters(prefix + child_name + ".")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for child_name, child in self._children():
            yield from child.named_buffers(prefix + child_name + ".")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...], dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float64):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = self.register_parameter(
            "weight", xavier_uniform(rng, in_dim, out_dim, (in_dim, out_dim), dtype))
        self.bias = self.register_parameter("bias", np.zeros(out_dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[1] != self.in_dim:
            raise ShapeMismatch(f"Linear({self.in_dim}->{self.out_dim}) got {x.data.shape}")
        return add(matmul(x, self.weight), self.bias)


class LSTMCell(Module):
    """Single LSTM cell; gate order (input, forget, candidate, output)."""

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator,
                 dtype=np.float64):
        super().__init__()
        self.in_dim, self.hidden_dim = in_dim, hidden_dim
        self.w_ih = self.register_parameter(
            "w_ih", xavier_uniform(rng, in_dim, 4 * hidden_dim, (in_dim, 4 * hidden_dim), dtype))
        self.w_hh = self.register_parameter(
            "w_hh", xavier_uniform(rng, hidden_dim, 4 * hidden_dim,
                                   (hidden_dim, 4 * hidden_dim), dtype))
        self.bias = self.register_parameter("bias", np.zeros(4 * hidden_dim, dtype=dtype))

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        if x.data.shape[1] != self.in_dim or h.data.shape[1] != self.hidden_dim:
            raise ShapeMismatch(
                f"LSTMCell({self.in_dim},{self.hidden_dim}) got x {x.data.shape}, h {h.data.shape}")
        gates = add(add(matmul(x, self.w_ih), matmul(h, self.w_hh)), self.bias)
        hd = self.hidden_dim
        i = sigmoid(gates[:, 0 * hd : 1 * hd])
        f = sigmoid(gates[:, 1 * hd : 2 * hd])
        g = tanh(gates[:, 2 * hd : 3 * hd])
        o = sigmoid(gates[:, 3 * hd : 4 * hd])
        c_new = add(mul(f, c), mul(i, g))
        h_new = mul(o, tanh(c_new))
        return h_new, c_new

    def zero_state(self, batch: int) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.hidden_dim), dtype=self.bias.data.dtype)
        return Tensor(z), Tensor(z.copy())


class BatchNorm1d(Module):
    """Batch normalization over axis 0 of (batch, features) rows."""

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float64):
        super().__init__()
        self.features = features
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.register_parameter("gamma", np.ones(features, dtype=dtype))
        self.beta = self.register_parameter("beta", np.zeros(features, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(features, dtype=dtype))
        self.register_buffer("running_var", np.ones(features, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[1] != self.features:
            raise ShapeMismatch(f"BatchNorm1d({self.features}) got {x.data.shape}")
        if self.training:
            mu = x.mean(axis=0, keepdims=True)
            xc = sub(x, mu)
            var = mul(xc, xc).mean(axis=0, keepdims=True)
            inv = pow_scalar(add(var, Tensor(self.eps)), -0.5)
            out = mul(xc, inv)
            n = x.data.shape[0]
            m = self.momentum
            self._buffers["running_mean"][:] = (
                (1.0 - m) * self._buffers["running_mean"] + m * mu.data[0])
            if n > 1:  # unbiased variance for the running estimate
                self._buffers["running_var"][:] = (
                    (1.0 - m) * self._buffers["running_var"]
                    + m * var.data[0] * n / (n - 1.0))
        else:
            rm = self._buffers["running_mean"]
            rv = self._buffers["running_var"]
            scale = 1.0 / np.sqrt(rv + self.eps)
            out = mul(sub(x, Tensor(rm)), Tensor(scale))
        return add(mul(out, self.gamma), self.beta)


class MapMLP(Module):
    """Three-layer map-feature encoder: Linear-BN-ReLU-Dropout, Linear-ReLU,
    Linear. Dropout only in the first layer."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator,
                 drop_p: float = 0.1, dtype=np.float64):
        super().__init__()
        self.drop_p = drop_p
        self.fc1 = Linear(in_dim, hidden, rng, dtype)
        self.bn1 = BatchNorm1d(hidden, dtype=dtype)
        self.fc2 = Linear(hidden, hidden, rng, dtype)
        self.fc3 = Linear(hidden, hidden, rng, dtype)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        h = dropout(relu(self.bn1(self.fc1(x))), self.drop_p, self.training, rng)
        h = relu(self.fc2(h))
        return self.fc3(h)
