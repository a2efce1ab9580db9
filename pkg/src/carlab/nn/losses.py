"""Loss functions returning ``(value, gradient w.r.t. prediction)``.

Values are reduced in float64; gradients come back in the prediction dtype.
"""

import numpy as np

from carlab.errors import ShapeMismatch

BCE_EPS = 1e-7


def mse_loss(pred, target):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    n = diff.size
    value = float(np.dot(diff.ravel(), diff.ravel()) / n)
    grad = (2.0 / n) * diff
    return value, grad.astype(pred.dtype if pred.dtype.kind == "f" else np.float64, copy=False)


def bce_loss(pred, label, eps=BCE_EPS):
    """Binary cross-entropy averaged over the batch, with ``pred`` clamped to ``[eps, 1 - eps]``.

    The gradient is that of the clamped expression, so it is zero wherever the
    clamp is active.
    """
    pred = np.asarray(pred)
    p = pred.astype(np.float64)
    y = np.broadcast_to(np.asarray(label, dtype=np.float64), p.shape)
    pc = np.clip(p, eps, 1.0 - eps)
    n = p.size
    value = float(-np.sum(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)) / n)
    inside = (p >= eps) & (p <= 1.0 - eps)
    grad = np.where(inside, (-y / pc + (1.0 - y) / (1.0 - pc)) / n, 0.0)
    return value, grad.astype(pred.dtype if pred.dtype.kind == "f" else np.float64, copy=False)
