"""Define-by-run reverse-mode differentiation over numpy arrays.

Every op returns a new :class:`Tensor`. When grad mode is on and any input
requires grad, the output keeps references to its inputs and a closure that
maps the output gradient to input gradients. :func:`backward` walks that graph
in reverse topological order. Parameters are leaf tensors; the graph is
dropped with the last reference to its outputs.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, ContractError, NumericDomainError

EPS = 1e-8

_state = {"grad": True, "dtype": np.float32, "debug": False}


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def default_dtype(dtype):
    """Set the dtype of newly created tensors (``float32`` or ``float64``)."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ConfigurationError(f"unsupported dtype {dtype}")
    prev = _state["dtype"]
    _state["dtype"] = dtype
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def debug_mode():
    """Check every forward result for NaN/Inf."""
    prev = _state["debug"]
    _state["debug"] = True
    try:
        yield
    finally:
        _state["debug"] = prev


def get_default_dtype():
    return _state["dtype"]


def grad_enabled():
    return _state["grad"]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _state["dtype"])
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    def __len__(self):
        return self.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _make(data, parents, backward_fn, op):
    """Wrap ``data`` and record a graph node when needed."""
    if _state["debug"] and not np.all(np.isfinite(data)):
        raise NumericDomainError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConfigurationError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ----------------------------------------------------------------------------
# elementwise arithmetic


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def add(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        gb = -g * out / b.data
        return unbroadcast(g / b.data, a.shape), unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "div")


def scale(a, s):
    """Multiply by a python scalar."""
    a = as_tensor(a)
    s = float(s)

    def bw(g):
        return (g * s,)

    return _make((a.data * s).astype(a.dtype, copy=False), (a,), bw, "scale")


def neg(a):
    return scale(a, -1.0)


def square(a):
    a = as_tensor(a)

    def bw(g):
        return (2.0 * g * a.data,)

    return _make(a.data * a.data, (a,), bw, "square")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), bw, "sqrt")


# ----------------------------------------------------------------------------
# activations


def sigmoid(a):
    a = as_tensor(a)
    out = (0.5 * (1.0 + np.tanh(0.5 * a.data))).astype(a.dtype, copy=False)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw, "sigmoid")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bw, "tanh")


def gelu(a):
    """GELU, tanh approximation."""
    a = as_tensor(a)

    def bw(g):
        return (kernels.gelu_backward(a.data, g),)

    return _make(kernels.gelu_forward(a.data), (a,), bw, "gelu")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bw, "relu")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw, "exp")


def log(a, clamp=None):
    """Natural log. With ``clamp`` the input is clipped to ``[clamp, 1 - clamp]``.

    Clipped entries pass no gradient.
    """
    a = as_tensor(a)
    x = a.data
    if clamp is not None:
        x = np.clip(x, clamp, 1.0 - clamp)
        inside = (a.data >= clamp) & (a.data <= 1.0 - clamp)
    elif np.any(x <= 0):
        raise NumericDomainError("log of non-positive value")

    def bw(g):
        gx = g / x
        if clamp is not None:
            gx = gx * inside
        return (gx,)

    return _make(np.log(x), (a,), bw, "log")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g):
        soft = np.exp(out)
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")


# ----------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, a.shape) / count).astype(a.dtype),)

    return _make(out, (a,), bw, "mean")


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Matrix product over the last two axes with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ConfigurationError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def bw(g):
        if b.ndim == 2:
            # fold batch axes into one GEMM for the weight gradient
            a2 = a.data.reshape(-1, a.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            gb = a2.T @ g2
        else:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), bw, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` shaped (in, out)."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ConfigurationError(
            f"linear: input width {x.shape[-1]} does not match weight {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ConfigurationError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data
    out = out.reshape(lead + (weight.shape[1],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, bw, "linear")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(a.data, axes), (a,), bw, "transpose")


# ----------------------------------------------------------------------------
# normalization and similarity


def layer_norm(x, weight=None, bias=None, eps=EPS):
    """Normalize over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    d = x.shape[-1]
    xhat, rstd = kernels.layernorm_forward(x.data.reshape(-1, d), eps)
    xhat_t = _make(
        xhat.reshape(x.shape),
        (x,),
        lambda g: (kernels.layernorm_backward(xhat, rstd, g.reshape(-1, d)).reshape(x.shape),),
        "layer_norm",
    )
    out = xhat_t
    if weight is not None:
        out = mul(out, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def l2_normalize(x, axis=-1, eps=EPS):
    """Divide each row by its L2 norm plus ``eps``."""
    x = as_tensor(x)
    if eps <= 0:
        norms = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
        if np.any(norms == 0):
            raise NumericDomainError("zero-norm row without epsilon guard")
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = norm + eps
    out = x.data / denom

    def bw(g):
        # d/dx [x / (|x| + eps)] applied to g
        dot = (g * x.data).sum(axis=axis, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        gx = g / denom - x.data * dot / (denom * denom * safe)
        return (gx,)

    return _make(out, (x,), bw, "l2_normalize")


def cosine_similarity(a, b, eps=EPS):
    """Pairwise cosine similarity between the rows of ``a`` and ``b``.

    ``a`` is (..., c, d) and ``b`` is (..., n, d); the result is (..., c, n).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ConfigurationError(f"cosine_similarity: widths {a.shape[-1]} and {b.shape[-1]} differ")
    return matmul(l2_normalize(a, eps=eps), transpose(l2_normalize(b, eps=eps)))


# ----------------------------------------------------------------------------
# shape and indexing


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ConfigurationError(f"reshape: cannot view {a.shape} as {shape}") from None

    def bw(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), bw, "reshape")


def concat(tensors: Sequence[Tensor], axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ConfigurationError(f"concat: {exc}") from None
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), bw, "concat")


def getitem(a, key):
    """Basic slicing; gradient scatters back into a zero buffer."""
    a = as_tensor(a)
    out = a.data[key]

    def bw(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _make(np.array(out, copy=True), (a,), bw, "getitem")


def broadcast_to(a, shape):
    a = as_tensor(a)

    def bw(g):
        return (unbroadcast(g, a.shape),)

    return _make(np.array(np.broadcast_to(a.data, shape)), (a,), bw, "broadcast_to")


def gather_rows(x, index):
    """Rows of a 2-d tensor selected by an index list (repeats allowed)."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2:
        raise ConfigurationError("gather_rows expects a 2-d tensor")

    def bw(g):
        return (kernels.segment_sum(g, index, x.shape[0]),)

    return _make(x.data[index], (x,), bw, "gather_rows")


def segment_sum(x, index, n_segments):
    """Sum rows of a 2-d tensor into ``n_segments`` buckets."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ConfigurationError("segment_sum expects (N, D) values and an (N,) index")

    def bw(g):
        return (g[index],)

    return _make(kernels.segment_sum(x.data, index, n_segments), (x,), bw, "segment_sum")


def pick(x, index, axis):
    """``take_along_axis`` with the picked axis removed.

    ``index`` has the shape of ``x`` without ``axis``.
    """
    x = as_tensor(x)
    idx = np.expand_dims(np.asarray(index, dtype=np.int64), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(np.squeeze(out, axis=axis), (x,), bw, "pick")


# ----------------------------------------------------------------------------
# backward pass


def _topological(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate gradients live only for the duration of the call.
    """
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = np.asarray(g, dtype=node.data.dtype)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ----------------------------------------------------------------------------
# initialization and gradient checking


def param_init(shape, scheme="uniform_fan_in", rng=None, value=0.0, fan_in=None):
    """Create a parameter tensor.

    Args:
        shape: tensor shape.
        scheme: ``"uniform_fan_in"`` (bound ``1/sqrt(fan_in)``), ``"normal"``
            (standard normal), ``"zeros"`` or ``"constant"``.
        rng: ``numpy.random.Generator``; required for random schemes.
        value: fill value for ``"constant"``.
        fan_in: defaults to ``shape[0]``.
    """
    shape = tuple(int(s) for s in shape)
    dtype = _state["dtype"]
    if scheme == "uniform_fan_in":
        if rng is None:
            raise ConfigurationError("uniform_fan_in initialization needs an rng")
        fan = fan_in if fan_in is not None else shape[0]
        bound = 1.0 / math.sqrt(fan)
        data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    elif scheme == "normal":
        if rng is None:
            raise ConfigurationError("normal initialization needs an rng")
        data = rng.standard_normal(shape).astype(dtype)
    elif scheme == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif scheme == "constant":
        data = np.full(shape, value, dtype=dtype)
    else:
        raise ConfigurationError(f"unknown init scheme {scheme!r}")
    return Tensor(data, requires_grad=True, dtype=dtype)


class GradCheckReport:
    def __init__(self, max_rel_error, tol, analytic, numeric, max_entry_error=0.0):
        self.max_rel_error = max_rel_error
        self.max_entry_error = max_entry_error
        self.tol = tol
        self.analytic = analytic
        self.numeric = numeric

    @property
    def passed(self):
        return self.max_rel_error <= self.tol

    def __bool__(self):
        return self.passed

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, "
                f"max_entry_error={self.max_entry_error:.3e}, tol={self.tol:g})")


def grad_check(f: Callable[[], Tensor], inputs: Iterable[Tensor], tol=1e-4, h=1e-3, floor=1e-6):
    """Compare tape gradients of scalar ``f()`` with central differences.

    ``inputs`` are leaf tensors read by ``f``; they are perturbed in place and
    restored. The relative error of one input is
    ``||a - n|| / max(||a||, ||n||, floor)`` over its whole gradient, and the
    report holds the worst input. Per-entry ratios are kept as a diagnostic
    (``max_entry_error``) only: an entry far below its tensor's gradient scale
    is dominated by the O(h^2) truncation error of the difference quotient.
    Run under ``default_dtype(np.float64)`` for meaningful tolerances.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = f()
    if out.data.size != 1:
        raise ContractError("grad_check needs a scalar-valued function")
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    numeric = []
    with no_grad():
        for t in inputs:
            num = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            nflat = num.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                nflat[i] = (fp - fm) / (2 * h)
            numeric.append(num)
    worst = entry = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), floor)
        worst = max(worst, float(np.linalg.norm(a - n)) / scale)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        entry = max(entry, float(np.max(np.abs(a - n) / denom)))
    for t in inputs:
        t.grad = None
    return GradCheckReport(worst, tol, analytic, numeric, entry)
