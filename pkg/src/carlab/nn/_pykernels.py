"""Pure-numpy conv/pool kernels.

Used when the compiled extension is unavailable or ``CARLAB_BACKEND=python``.
The call surface mirrors ``carlab.nn._ckernels`` exactly; results agree to
rounding, not bitwise, because the summation order differs.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def _pad(x, kh, kw):
    return np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))


def _windows(xp, kh, kw):
    # (N, C, H, W, kh, kw) view over the padded input
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))


def conv2d_forward(x, w, b):
    """Same-padded stride-1 cross-correlation of ``x`` (N,C,H,W) with ``w`` (F,C,kh,kw)."""
    f, c, kh, kw = w.shape
    win = _windows(_pad(x, kh, kw), kh, kw)
    out = np.einsum("nchwij,fcij->nfhw", win, w.astype(x.dtype, copy=False), optimize=True)
    out += np.asarray(b, dtype=x.dtype)[None, :, None, None]
    return np.ascontiguousarray(out, dtype=x.dtype)


def conv2d_backward(x, w, grad_out, need_input=True):
    """Return ``(dx, dw, db)``; ``dw`` and ``db`` are float64."""
    f, c, kh, kw = w.shape
    g = np.asarray(grad_out, dtype=x.dtype)
    win = _windows(_pad(x, kh, kw), kh, kw)
    dw = np.einsum(
        "nchwij,nfhw->fcij", win.astype(np.float64), g.astype(np.float64), optimize=True
    )
    db = g.sum(axis=(0, 2, 3), dtype=np.float64)
    dx = None
    if need_input:
        w_t = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).astype(x.dtype)
        gwin = _windows(_pad(g, kh, kw), kh, kw)
        dx = np.einsum("nfhwij,cfij->nchw", gwin, w_t, optimize=True)
        dx = np.ascontiguousarray(dx, dtype=x.dtype)
    return dx, dw, db


def meanpool2d(x, ph, pw):
    *lead, h, w = x.shape
    blocks = x.reshape(*lead, h // ph, ph, w // pw, pw)
    return blocks.mean(axis=(-3, -1)).astype(x.dtype, copy=False)


def upsample2d(x, ph, pw):
    return np.repeat(np.repeat(x, ph, axis=-2), pw, axis=-1)
