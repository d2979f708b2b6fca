"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback
takes over. Setting ``COCGAN_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("COCGAN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

segment_sum = _impl.segment_sum
argmax_columns = _impl.argmax_columns
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward


def compiled_available():
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
