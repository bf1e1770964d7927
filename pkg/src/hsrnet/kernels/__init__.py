"""Hot convolution kernels with a numba and a pure-numpy backend.

The backend is chosen once at import time from the ``HSR_BACKEND``
environment variable: ``numba`` (default when importable) or ``numpy``.
``benchmarks/bench_conv.py`` compares both.
"""

import os
import warnings

from . import numpy_backend

_VALID = ("numba", "numpy")


def get_backend(name):
    """Return the kernel module for an explicit backend name."""
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        from . import numba_backend

        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}; expected one of {_VALID}")


def _select():
    requested = os.environ.get("HSR_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy", numpy_backend
    if requested in ("", "numba"):
        try:
            return "numba", get_backend("numba")
        except ImportError as exc:
            if requested == "numba":
                raise
            warnings.warn(f"numba unavailable ({exc}); falling back to numpy kernels")
            return "numpy", numpy_backend
    raise ValueError(f"HSR_BACKEND={requested!r} not understood; expected one of {_VALID}")


BACKEND, _impl = _select()

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight
