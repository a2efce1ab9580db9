"""SGD and Adam over a :class:`~carlab.nn.network.ParamStore`.

Updates are computed in float64 and written back in the parameter's storage
dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(store, state: OptimizerState) -> None:
    """Plain gradient descent, ``p <- p - lr * g``; no momentum."""
    lr = state.learning_rate
    for _, p, g in store.items():
        p[...] = p.astype(np.float64) - lr * g
    state.step += 1


def adam_step(store, state: OptimizerState) -> None:
    """Bias-corrected Adam update."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for name, p, g in store.items():
        if name not in state.m:
            state.m[name] = np.zeros(p.shape, dtype=np.float64)
            state.v[name] = np.zeros(p.shape, dtype=np.float64)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p[...] = p.astype(np.float64) - step


class SGD:
    def __init__(self, store, learning_rate=0.001):
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        self.store = store
        self.state = OptimizerState("sgd", learning_rate)

    def step(self):
        sgd_step(self.store, self.state)


class Adam:
    def __init__(self, store, learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        self.store = store
        self.state = OptimizerState("adam", learning_rate, beta1, beta2, eps)

    def step(self):
        adam_step(self.store, self.state)
