"""Central finite-difference verification of analytic gradients.

The checked object needs ``forward(x) -> (out, cache)``,
``backward(dout, cache, need_input=...)`` and ``parameters() -> ParamStore``,
all in float64. ``loss(out)`` must return ``(value, dout)``.

Coordinates whose ``+h`` and ``-h`` evaluations land on different sides of a
ReLU kink are excluded, since the one-sided slopes differ there and central
differences are meaningless; the number skipped is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from carlab.nn.layers import record_relu_masks


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str | None
    n_checked: int
    n_skipped: int


def _masks_equal(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def relative_error(analytic, numeric, floor=1e-8):
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


def grad_check_report(network, inputs, loss, h=1e-4, floor=1e-8, skip_kinks=True) -> GradCheckResult:
    store = network.parameters()
    for name, p, _ in store.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 parameters; {name} is {p.dtype}")

    store.zero_grad()
    out, cache = network.forward(inputs)
    _, dout = loss(out)
    network.backward(dout, cache, need_input=False)
    analytic = {name: g.copy() for name, _, g in store.items()}

    def evaluate():
        with record_relu_masks() as masks:
            value, _ = loss(network.forward(inputs)[0])
        return value, masks

    worst, worst_name, checked, skipped = 0.0, None, 0, 0
    for name, p, _ in store.items():
        numeric = np.zeros(p.shape)
        usable = np.ones(p.shape, dtype=bool)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, mp = evaluate()
            flat[i] = orig - h
            lm, mm = evaluate()
            flat[i] = orig
            if skip_kinks and not _masks_equal(mp, mm):
                usable.flat[i] = False
                continue
            numeric.flat[i] = (lp - lm) / (2.0 * h)
        err = relative_error(analytic[name], numeric, floor)[usable]
        checked += int(usable.sum())
        skipped += int((~usable).sum())
        if err.size and err.max() > worst:
            worst, worst_name = float(err.max()), name
    return GradCheckResult(worst, worst_name, checked, skipped)


def grad_check(network, inputs, loss, h=1e-4, floor=1e-8) -> float:
    """Worst per-element relative error between analytic and central-difference gradients."""
    return grad_check_report(network, inputs, loss, h=h, floor=floor).max_rel_error


class StackProbe:
    """Adapts a :class:`~carlab.nn.network.Sequential` to the grad-check protocol."""

    def __init__(self, stack):
        from carlab.nn.network import ParamStore

        self.stack = stack
        self._store = ParamStore()
        self._store.add_stack(stack.name, stack)

    def parameters(self):
        return self._store

    def forward(self, x):
        return self.stack.forward(x)

    def backward(self, dout, cache, need_input=True):
        return self.stack.backward(dout, cache, need_input=need_input)
