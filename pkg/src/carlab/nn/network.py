"""Layer stacks, parameter registry and input corruption."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from carlab.nn.layers import Layer


class Sequential:
    """An ordered stack of layers run front to back."""

    def __init__(self, layers: Iterable[Layer], name: str = "seq"):
        self.layers = list(layers)
        self.name = name

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, dy, caches, need_input=True):
        """Backpropagate ``dy``; the first layer skips its input gradient unless ``need_input``."""
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            dy = self.layers[i].backward(dy, caches[i], need_input=need_input or i > 0)
        return dy

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def specs(self):
        return [layer.spec() for layer in self.layers]

    def __iter__(self):
        return iter(self.layers)


class ParamStore:
    """Named parameters and their gradient slots, in declaration order.

    A layer registered twice (weight sharing) is stored once.
    """

    def __init__(self):
        self._entries: dict[str, tuple[Layer, str]] = {}
        self._seen: set[int] = set()

    def add_layer(self, prefix: str, layer: Layer):
        if id(layer) in self._seen:
            return
        self._seen.add(id(layer))
        for key in layer.params:
            self._entries[f"{prefix}.{key}"] = (layer, key)

    def add_stack(self, prefix: str, stack: Sequential):
        for i, layer in enumerate(stack.layers):
            if layer.params:
                self.add_layer(f"{prefix}.{i}", layer)

    def items(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for name, (layer, key) in self._entries.items():
            yield name, layer.params[key], layer.grads[key]

    def names(self) -> list[str]:
        return list(self._entries)

    def __getitem__(self, name):
        layer, key = self._entries[name]
        return layer.params[key]

    def set(self, name, value):
        layer, key = self._entries[name]
        arr = layer.params[key]
        if arr.shape != value.shape:
            raise ValueError(f"{name}: shape {value.shape} does not match {arr.shape}")
        arr[...] = value

    def zero_grad(self):
        for _, _, g in self.items():
            g.fill(0.0)

    def count(self) -> int:
        return sum(p.size for _, p, _ in self.items())

    def __len__(self):
        return len(self._entries)


def corrupt(x, rho, rng):
    """Zero each element independently with probability ``rho``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"corruption factor must lie in [0, 1], got {rho}")
    if rho == 0.0:
        return x.copy()
    keep = rng.random(x.shape) >= rho
    return x * keep.astype(x.dtype)
