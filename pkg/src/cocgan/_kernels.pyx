# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Signatures mirror ``cocgan._kernels_py``."""

import numpy as np
cimport cython
from libc.math cimport tanh, sqrt

ctypedef fused real:
    float
    double

cdef extern from "_fastmath.h":
    void cg_gelu_fwd_f32(const float* x, float* out, long n) nogil
    void cg_gelu_bwd_f32(const float* x, const float* g, float* out, long n) nogil

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def segment_sum(values, index, Py_ssize_t n_segments):
    values = np.ascontiguousarray(values)
    idx = np.ascontiguousarray(index, dtype=np.int64)
    out = np.zeros((n_segments, values.shape[1]), dtype=values.dtype)
    if values.dtype == np.float32:
        _segment_sum[float](values, idx, out)
    else:
        _segment_sum[double](values, idx, out)
    return out


cdef void _segment_sum(real[:, ::1] values, long long[::1] index, real[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, s
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t d = values.shape[1]
    for i in range(n):
        s = index[i]
        for j in range(d):
            out[s, j] += values[i, j]


def argmax_columns(sim):
    sim = np.ascontiguousarray(sim)
    out = np.empty((sim.shape[0], sim.shape[2]), dtype=np.int64)
    if sim.dtype == np.float32:
        _argmax_columns[float](sim, out)
    else:
        _argmax_columns[double](sim, out)
    return out


cdef void _argmax_columns(real[:, :, ::1] sim, long long[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t b, r, col
    cdef Py_ssize_t nb = sim.shape[0]
    cdef Py_ssize_t nr = sim.shape[1]
    cdef Py_ssize_t nc = sim.shape[2]
    cdef real best
    for b in range(nb):
        for col in range(nc):
            out[b, col] = 0
        for r in range(1, nr):
            for col in range(nc):
                best = sim[b, out[b, col], col]
                # strict comparison keeps the lowest index on ties
                if sim[b, r, col] > best:
                    out[b, col] = r


def gelu_forward(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    if x.size == 0:
        return out
    cdef float[::1] xf, of
    if x.dtype == np.float32:
        xf = x.reshape(-1)
        of = out.reshape(-1)
        with nogil:
            cg_gelu_fwd_f32(&xf[0], &of[0], xf.shape[0])
    else:
        _gelu_fwd[double](x.reshape(-1), out.reshape(-1))
    return out


cdef void _gelu_fwd(real[::1] x, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v
    for i in range(x.shape[0]):
        v = x[i]
        out[i] = <real>(0.5 * v * (1.0 + tanh(GELU_C * (v + GELU_A * v * v * v))))


def gelu_backward(x, grad):
    x = np.ascontiguousarray(x)
    grad = np.ascontiguousarray(grad, dtype=x.dtype)
    out = np.empty_like(x)
    if x.size == 0:
        return out
    cdef float[::1] xf, gf, of
    if x.dtype == np.float32:
        xf = x.reshape(-1)
        gf = grad.reshape(-1)
        of = out.reshape(-1)
        with nogil:
            cg_gelu_bwd_f32(&xf[0], &gf[0], &of[0], xf.shape[0])
    else:
        _gelu_bwd[double](x.reshape(-1), grad.reshape(-1), out.reshape(-1))
    return out


cdef void _gelu_bwd(real[::1] x, real[::1] g, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v, t
    for i in range(x.shape[0]):
        v = x[i]
        t = tanh(GELU_C * (v + GELU_A * v * v * v))
        out[i] = <real>(g[i] * (0.5 * (1.0 + t)
                                + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)))


def layernorm_forward(x, double eps):
    x = np.ascontiguousarray(x)
    xhat = np.empty_like(x)
    rstd = np.empty(x.shape[0], dtype=x.dtype)
    if x.dtype == np.float32:
        _ln_fwd[float](x, eps, xhat, rstd)
    else:
        _ln_fwd[double](x, eps, xhat, rstd)
    return xhat, rstd


cdef void _ln_fwd(real[:, ::1] x, double eps, real[:, ::1] xhat, real[::1] rstd) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef double mu, var, diff, r
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mu
            var += diff * diff
        var /= d
        r = 1.0 / sqrt(var + eps)
        rstd[i] = <real>r
        for j in range(d):
            xhat[i, j] = <real>((x[i, j] - mu) * r)


def layernorm_backward(xhat, rstd, grad):
    xhat = np.ascontiguousarray(xhat)
    grad = np.ascontiguousarray(grad, dtype=xhat.dtype)
    rstd = np.ascontiguousarray(rstd, dtype=xhat.dtype)
    out = np.empty_like(xhat)
    if xhat.dtype == np.float32:
        _ln_bwd[float](xhat, rstd, grad, out)
    else:
        _ln_bwd[double](xhat, rstd, grad, out)
    return out


cdef void _ln_bwd(real[:, ::1] xhat, real[::1] rstd, real[:, ::1] g, real[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = xhat.shape[0]
    cdef Py_ssize_t d = xhat.shape[1]
    cdef double gm, gx
    for i in range(n):
        gm = 0.0
        gx = 0.0
        for j in range(d):
            gm += g[i, j]
            gx += g[i, j] * xhat[i, j]
        gm /= d
        gx /= d
        for j in range(d):
            out[i, j] = <real>((g[i, j] - gm - xhat[i, j] * gx) * rstd[i])
