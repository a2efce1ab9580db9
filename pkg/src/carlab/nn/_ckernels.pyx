# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled conv/pool kernels. Same call surface as :mod:`carlab.nn._pykernels`."""

import numpy as np

cdef extern from "_conv.h":
    void conv_valid_f32(const float*, const float*, const float*, float*,
                        Py_ssize_t, Py_ssize_t, Py_ssize_t, Py_ssize_t,
                        Py_ssize_t, Py_ssize_t, Py_ssize_t) nogil
    void conv_valid_f64(const double*, const double*, const double*, double*,
                        Py_ssize_t, Py_ssize_t, Py_ssize_t, Py_ssize_t,
                        Py_ssize_t, Py_ssize_t, Py_ssize_t) nogil
    void conv_wgrad_f32(const float*, const float*, double*,
                        Py_ssize_t, Py_ssize_t, Py_ssize_t, Py_ssize_t,
                        Py_ssize_t, Py_ssize_t, Py_ssize_t) nogil
    void conv_wgrad_f64(const double*, const double*, double*,
                        Py_ssize_t, Py_ssize_t, Py_ssize_t, Py_ssize_t,
                        Py_ssize_t, Py_ssize_t, Py_ssize_t) nogil
    void pool_mean_f32(const float*, float*, Py_ssize_t, Py_ssize_t,
                       Py_ssize_t, Py_ssize_t, Py_ssize_t) nogil
    void pool_mean_f64(const double*, double*, Py_ssize_t, Py_ssize_t,
                       Py_ssize_t, Py_ssize_t, Py_ssize_t) nogil
    void upsample_f32(const float*, float*, Py_ssize_t, Py_ssize_t,
                      Py_ssize_t, Py_ssize_t, Py_ssize_t) nogil
    void upsample_f64(const double*, double*, Py_ssize_t, Py_ssize_t,
                      Py_ssize_t, Py_ssize_t, Py_ssize_t) nogil

ctypedef fused real:
    float
    double

BACKEND = "compiled"


cdef void _valid(real[:, :, :, ::1] xp, real[:, :, :, ::1] w, real* bias,
                 real[:, :, :, ::1] out) noexcept:
    cdef Py_ssize_t N = out.shape[0], F = out.shape[1]
    cdef Py_ssize_t H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t C = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    if N == 0 or F == 0 or H == 0 or W == 0:
        return
    with nogil:
        if real is float:
            conv_valid_f32(&xp[0, 0, 0, 0], &w[0, 0, 0, 0], bias,
                           &out[0, 0, 0, 0], N, C, F, H, W, KH, KW)
        else:
            conv_valid_f64(&xp[0, 0, 0, 0], &w[0, 0, 0, 0], bias,
                           &out[0, 0, 0, 0], N, C, F, H, W, KH, KW)


def _pad(x, kh, kw):
    n, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    out[:, :, ph:ph + h, pw:pw + w] = x
    return out


def _forward(real[:, :, :, ::1] xp, real[:, :, :, ::1] w, real[::1] b, out):
    cdef real[:, :, :, ::1] o = out
    _valid(xp, w, &b[0], o)


def _valid_nobias(real[:, :, :, ::1] xp, real[:, :, :, ::1] w, out):
    cdef real[:, :, :, ::1] o = out
    _valid(xp, w, NULL, o)


def _wgrad(real[:, :, :, ::1] xp, real[:, :, :, ::1] g, double[:, :, :, ::1] dw):
    cdef Py_ssize_t N = g.shape[0], F = g.shape[1], H = g.shape[2], W = g.shape[3]
    cdef Py_ssize_t C = dw.shape[1], KH = dw.shape[2], KW = dw.shape[3]
    if N == 0 or H == 0 or W == 0:
        return
    with nogil:
        if real is float:
            conv_wgrad_f32(&xp[0, 0, 0, 0], &g[0, 0, 0, 0], &dw[0, 0, 0, 0],
                           N, C, F, H, W, KH, KW)
        else:
            conv_wgrad_f64(&xp[0, 0, 0, 0], &g[0, 0, 0, 0], &dw[0, 0, 0, 0],
                           N, C, F, H, W, KH, KW)


def conv2d_forward(x, w, b):
    """Same-padded stride-1 cross-correlation of ``x`` (N,C,H,W) with ``w`` (F,C,kh,kw)."""
    n, _, h, wd = x.shape
    f, _, kh, kw = w.shape
    out = np.empty((n, f, h, wd), dtype=x.dtype)
    _forward(np.ascontiguousarray(_pad(x, kh, kw)), np.ascontiguousarray(w, dtype=x.dtype),
             np.ascontiguousarray(b, dtype=x.dtype), out)
    return out


def conv2d_backward(x, w, grad_out, need_input=True):
    """Return ``(dx, dw, db)``; ``dw`` and ``db`` are float64."""
    f, c, kh, kw = w.shape
    g = np.ascontiguousarray(grad_out, dtype=x.dtype)
    dw = np.zeros((f, c, kh, kw), dtype=np.float64)
    _wgrad(np.ascontiguousarray(_pad(x, kh, kw)), g, dw)
    db = g.sum(axis=(0, 2, 3), dtype=np.float64)
    dx = None
    if need_input:
        w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3), dtype=x.dtype)
        dx = np.empty(x.shape, dtype=x.dtype)
        _valid_nobias(np.ascontiguousarray(_pad(g, kh, kw)), w_t, dx)
    return dx, dw, db


def _pool(real[:, :, ::1] x, real[:, :, ::1] out, Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t P = x.shape[0], H = x.shape[1], W = x.shape[2]
    if P == 0 or out.shape[1] == 0 or out.shape[2] == 0:
        return
    with nogil:
        if real is float:
            pool_mean_f32(&x[0, 0, 0], &out[0, 0, 0], P, H, W, ph, pw)
        else:
            pool_mean_f64(&x[0, 0, 0], &out[0, 0, 0], P, H, W, ph, pw)


def _up(real[:, :, ::1] x, real[:, :, ::1] out, Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t P = x.shape[0], H = x.shape[1], W = x.shape[2]
    if P == 0 or H == 0 or W == 0:
        return
    with nogil:
        if real is float:
            upsample_f32(&x[0, 0, 0], &out[0, 0, 0], P, H, W, ph, pw)
        else:
            upsample_f64(&x[0, 0, 0], &out[0, 0, 0], P, H, W, ph, pw)


def meanpool2d(x, ph, pw):
    lead = x.shape[:-2]
    h, w = x.shape[-2:]
    flat = np.ascontiguousarray(x).reshape(-1, h, w)
    out = np.empty((flat.shape[0], h // ph, w // pw), dtype=x.dtype)
    _pool(flat, out, ph, pw)
    return out.reshape(lead + (h // ph, w // pw))


def upsample2d(x, ph, pw):
    lead = x.shape[:-2]
    h, w = x.shape[-2:]
    flat = np.ascontiguousarray(x).reshape(-1, h, w)
    out = np.empty((flat.shape[0], h * ph, w * pw), dtype=x.dtype)
    _up(flat, out, ph, pw)
    return out.reshape(lead + (h * ph, w * pw))
