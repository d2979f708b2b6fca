"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
Results agree to rounding; the compiled versions avoid the temporaries numpy
allocates for each elementwise pass.
"""

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def segment_sum(values, index, n_segments):
    """Sum rows of ``values`` into ``n_segments`` buckets selected by ``index``.

    Args:
        values: (N, D) array.
        index: (N,) integer array with entries in ``[0, n_segments)``.
        n_segments: number of output rows.

    Returns:
        (n_segments, D) array with the dtype of ``values``.
    """
    values = np.ascontiguousarray(values)
    out = np.zeros((n_segments, values.shape[1]), dtype=values.dtype)
    np.add.at(out, np.asarray(index, dtype=np.intp), values)
    return out


def argmax_columns(sim):
    """Index of the largest entry down each column of every (c, n) slab.

    Ties resolve to the lowest row index.

    Args:
        sim: (B, c, n) array.

    Returns:
        (B, n) int64 array.
    """
    return np.argmax(sim, axis=1).astype(np.int64)


def gelu_forward(x):
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return (0.5 * x * (1.0 + np.tanh(inner))).astype(x.dtype, copy=False)


def gelu_backward(x, grad):
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(inner)
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
    return (grad * d).astype(x.dtype, copy=False)


def layernorm_forward(x, eps):
    """Normalize each row of a 2-d array to zero mean and unit variance.

    Returns:
        (xhat, rstd) where ``rstd`` has shape (N,).
    """
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return (xc * rstd).astype(x.dtype, copy=False), rstd[:, 0].astype(x.dtype, copy=False)


def layernorm_backward(xhat, rstd, grad):
    gmean = grad.mean(axis=1, keepdims=True)
    gx = (grad * xhat).mean(axis=1, keepdims=True)
    dx = (grad - gmean - xhat * gx) * rstd[:, None]
    return dx.astype(xhat.dtype, copy=False)
