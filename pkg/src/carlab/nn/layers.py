"""Layer types with explicit forward/backward passes.

A layer's ``forward`` returns ``(output, cache)`` and its ``backward`` takes
that cache back, so one layer object may appear several times in a graph
(the shared latent layer does). Parameter gradients are accumulated in
float64 slots and must be zeroed by the owner between steps.

Tensors are numpy arrays: ``(N, C, H, W)`` for spatial layers and
``(N, D)`` for dense ones.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import expit

from carlab.errors import NonDivisibleShape, ShapeMismatch
from carlab.nn import kernels

_relu_log: list | None = None


@contextlib.contextmanager
def record_relu_masks():
    """Collect the activation masks of every ReLU evaluated inside the block."""
    global _relu_log
    prev, _relu_log = _relu_log, []
    try:
        yield _relu_log
    finally:
        _relu_log = prev


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def he_uniform(rng, shape, fan_in, fan_out, dtype):
    """Variance ``2 / fan_in``: keeps activation scale roughly constant through ReLU stacks."""
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


INITIALIZERS = {"he": he_uniform, "glorot": glorot_uniform}


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros(value.shape, dtype=np.float64)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def spec(self) -> dict:
        return {"kind": self.kind}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, cache, need_input=True):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class Conv2D(Layer):
    """Stride-1 same-padded cross-correlation with ``filters`` output planes."""

    kind = "conv2d"

    def __init__(self, in_channels, filters, kernel=(3, 3), rng=None, dtype=np.float32, init="glorot"):
        super().__init__()
        kh, kw = kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeMismatch(f"same padding needs odd kernel sides, got {kernel}")
        self.in_channels, self.filters, self.kernel = int(in_channels), int(filters), (kh, kw)
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (self.filters, self.in_channels, kh, kw)
        self._add_param("W", INITIALIZERS[init](rng, shape, self.in_channels * kh * kw,
                                                self.filters * kh * kw, dtype))
        self._add_param("b", np.zeros(self.filters, dtype=dtype))

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "filters": self.filters, "kernel": list(self.kernel)}

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"conv2d expects (N, {self.in_channels}, H, W), got {x.shape}")
        return kernels.conv2d_forward(x, self.params["W"], self.params["b"]), x

    def backward(self, dy, cache, need_input=True):
        dx, dw, db = kernels.conv2d_backward(cache, self.params["W"], dy, need_input)
        self.grads["W"] += dw
        self.grads["b"] += db
        return dx


class MeanPool2D(Layer):
    kind = "meanpool2d"

    def __init__(self, factors=(2, 2)):
        super().__init__()
        self.factors = tuple(int(f) for f in factors)

    def spec(self):
        return {"kind": self.kind, "factors": list(self.factors)}

    def forward(self, x):
        ph, pw = self.factors
        if x.shape[-2] % ph or x.shape[-1] % pw:
            raise NonDivisibleShape(f"{x.shape[-2:]} not divisible by pool factors {self.factors}")
        return kernels.meanpool2d(x, ph, pw), None

    def backward(self, dy, cache, need_input=True):
        ph, pw = self.factors
        return kernels.upsample2d(dy, ph, pw) * dy.dtype.type(1.0 / (ph * pw))


class Upsample2D(Layer):
    kind = "upsample2d"

    def __init__(self, factors=(2, 2)):
        super().__init__()
        self.factors = tuple(int(f) for f in factors)

    def spec(self):
        return {"kind": self.kind, "factors": list(self.factors)}

    def forward(self, x):
        return kernels.upsample2d(x, *self.factors), None

    def backward(self, dy, cache, need_input=True):
        ph, pw = self.factors
        return kernels.meanpool2d(dy, ph, pw) * dy.dtype.type(ph * pw)


class Dense(Layer):
    """Affine map ``y = x @ W.T + b`` with ``W`` of shape ``(out_dim, in_dim)``."""

    kind = "dense"

    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32, init="glorot"):
        super().__init__()
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        self._add_param("W", INITIALIZERS[init](rng, (self.out_dim, self.in_dim),
                                                self.in_dim, self.out_dim, dtype))
        self._add_param("b", np.zeros(self.out_dim, dtype=dtype))

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"dense expects (N, {self.in_dim}), got {x.shape}")
        W, b = self.params["W"], self.params["b"]
        return x @ W.T + b, x

    def backward(self, dy, cache, need_input=True):
        x = cache
        dy64 = dy.astype(np.float64, copy=False)
        self.grads["W"] += dy64.T @ x.astype(np.float64, copy=False)
        self.grads["b"] += dy64.sum(axis=0)
        if not need_input:
            return None
        return (dy @ self.params["W"]).astype(dy.dtype, copy=False)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, need_input=True):
        return dy.reshape(cache)


class Reshape(Layer):
    """Reshape the per-sample part of the tensor to ``shape``."""

    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def spec(self):
        return {"kind": self.kind, "shape": list(self.shape)}

    def forward(self, x):
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise ShapeMismatch(f"cannot reshape {x.shape[1:]} to {self.shape}")
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, dy, cache, need_input=True):
        return dy.reshape(cache)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        if _relu_log is not None:
            _relu_log.append(mask)
        return x * mask, mask

    def backward(self, dy, cache, need_input=True):
        return dy * cache


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        y = expit(x)
        return y, y

    def backward(self, dy, cache, need_input=True):
        y = cache
        return dy * y * (1 - y)


def relu(x):
    return ReLU().forward(np.asarray(x))[0]


def sigmoid(x):
    return expit(np.asarray(x))
