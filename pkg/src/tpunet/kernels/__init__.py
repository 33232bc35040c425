"""Hot numeric kernels with switchable backends.

Two implementations share one contract: ``numpy_backend`` (vectorized
slicing, always available) and ``numba_backend`` (jitted fill/scatter
loops around the same BLAS matmuls). Selection order:

* ``TPUNET_BACKEND=numpy`` forces the pure-numpy path,
* ``TPUNET_BACKEND=numba`` requires numba and fails loudly without it,
* unset or ``auto`` picks numba when importable, else falls back.

``tpunet bench`` times both on the shapes the model actually runs.
"""

import os

from . import numpy_backend

_impl = numpy_backend
_name = "numpy"


def _select_initial():
    global _impl, _name
    requested = os.environ.get("TPUNET_BACKEND", "auto").lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(f"TPUNET_BACKEND must be auto|numba|numpy, got {requested!r}")
    if requested == "numpy":
        return
    try:
        from . import numba_backend
    except ImportError:
        if requested == "numba":
            raise
        return
    _impl = numba_backend
    _name = "numba"


def set_backend(name: str):
    """Switch the active backend at runtime (used by tests and the benchmark)."""
    global _impl, _name
    if name == "numpy":
        _impl, _name = numpy_backend, "numpy"
    elif name == "numba":
        from . import numba_backend
        _impl, _name = numba_backend, "numba"
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend_name() -> str:
    return _name


def numba_available() -> bool:
    try:
        from . import numba_backend  # noqa: F401
    except ImportError:
        return False
    return True


def conv_forward(x, w, pad, want_cols: bool = False):
    return _impl.conv_forward(x, w, pad, want_cols)


def conv_backward(x, w, gout, pad, need_x, need_w, cols=None):
    return _impl.conv_backward(x, w, gout, pad, need_x, need_w, cols)


def maxpool2_forward(x):
    return _impl.maxpool2_forward(x)


def maxpool2_backward(gout, idx):
    return _impl.maxpool2_backward(gout, idx)


_select_initial()
