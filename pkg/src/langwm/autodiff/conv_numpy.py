"""Pure-numpy convolution kernels (im2col style).

Fallback used when the compiled extension is unavailable. All three
primitives operate on float32/float64 arrays:

    forward(x, w, s, p)            cross-correlation, valid after padding
    input_grad(gy, w, s, p, shape) adjoint w.r.t. the input
    weight_grad(x, gy, s, p, shape) adjoint w.r.t. the weight
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, k: int, s: int) -> np.ndarray:
    """View of shape (B, C, Ho, Wo, K, K) over the padded input."""
    b, c, h, w = xp.shape
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    sb, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(b, c, ho, wo, k, k),
        strides=(sb, sc, sh * s, sw * s, sh, sw),
        writeable=False,
    )


def forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    k = w.shape[2]
    xp = _pad(x, padding)
    win = _windows(xp, k, stride)
    # (B,C,Ho,Wo,K,K) x (O,C,K,K) -> (B,Ho,Wo,O)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def input_grad(gy: np.ndarray, w: np.ndarray, stride: int, padding: int,
               x_shape: tuple) -> np.ndarray:
    b, c, h, wdt = x_shape
    k = w.shape[2]
    ho, wo = gy.shape[2], gy.shape[3]
    # (B,O,Ho,Wo) x (O,C,K,K) -> (B,Ho,Wo,C,K,K)
    cols = np.tensordot(gy, w, axes=([1], [0]))
    gxp = np.zeros((b, c, h + 2 * padding, wdt + 2 * padding), dtype=gy.dtype)
    for ki in range(k):
        for kj in range(k):
            gxp[:, :, ki:ki + ho * stride:stride, kj:kj + wo * stride:stride] += (
                cols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    if padding:
        return gxp[:, :, padding:-padding, padding:-padding].copy()
    return gxp


def weight_grad(x: np.ndarray, gy: np.ndarray, stride: int, padding: int,
                w_shape: tuple) -> np.ndarray:
    k = w_shape[2]
    xp = _pad(x, padding)
    win = _windows(xp, k, stride)
    # (B,O,Ho,Wo) x (B,C,Ho,Wo,K,K) -> (O,C,K,K)
    return np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))
