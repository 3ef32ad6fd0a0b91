"""Convolution kernel dispatch.

Prefers the compiled extension (`langwm.autodiff._convkernels`) and falls
back to the vectorized numpy implementation when it is missing. The choice
is made once at import; set LANGWM_CONV_BACKEND=numpy|cython to force one.
Run `benchmarks/bench_conv.py` to compare the two on your machine.
"""

from __future__ import annotations

import os

import numpy as np

from . import conv_numpy

_requested = os.environ.get("LANGWM_CONV_BACKEND", "").lower()

_impl = None
if _requested != "numpy":
    try:
        from . import _convkernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = None
        if _requested == "cython":
            raise

BACKEND = "cython" if _impl is not None else "numpy"


def _contig(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


def forward(x, w, stride: int, padding: int):
    if _impl is None:
        return conv_numpy.forward(x, w, stride, padding)
    return _impl.forward(_contig(x), _contig(w), stride, padding)


def input_grad(gy, w, stride: int, padding: int, x_shape):
    if _impl is None:
        return conv_numpy.input_grad(gy, w, stride, padding, x_shape)
    return _impl.input_grad(_contig(gy), _contig(w), stride, padding, tuple(x_shape))


def weight_grad(x, gy, stride: int, padding: int, w_shape):
    if _impl is None:
        return conv_numpy.weight_grad(x, gy, stride, padding, w_shape)
    return _impl.weight_grad(_contig(x), _contig(gy), stride, padding, tuple(w_shape))
