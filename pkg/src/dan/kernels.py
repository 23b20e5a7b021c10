"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
NumPy fallback in ``_pykernels`` is used. Set ``DAN_KERNELS=python`` to force
the fallback (the benchmark and the parity tests use this).
"""
import os

import numpy as np

from . import _pykernels

_py = _pykernels
try:
    from . import _ckernels as _c
except ImportError:  # extension not built
    _c = None

BACKEND = "python" if (_c is None or os.environ.get("DAN_KERNELS") == "python") else "cython"
_impl = _c if BACKEND == "cython" else _py


def available_backends():
    return ["python"] + (["cython"] if _c is not None else [])


def get_backend(name):
    if name == "python":
        return _py
    if name == "cython":
        if _c is None:
            raise ImportError("the compiled kernel extension is not built")
        return _c
    raise ValueError(f"unknown kernel backend {name!r}")


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def unfold(x, window):
    return _impl.unfold(_f64(x), int(window))


def fold(grad, window, length):
    return _impl.fold(_f64(grad), int(window), int(length))


def max_pool(x, counts):
    return _impl.max_pool(_f64(x), _i64(counts))


def max_pool_backward(grad, arg, steps):
    return _impl.max_pool_backward(_f64(grad), _i64(arg), int(steps))


def scatter_add_rows(src, index, num_rows):
    return _impl.scatter_add_rows(_f64(src), _i64(index), int(num_rows))
