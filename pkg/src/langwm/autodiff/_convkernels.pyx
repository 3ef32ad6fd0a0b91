# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution kernels: the hot inner loops of the pixel path.

Same contracts as `conv_numpy`; see that module for the reference
implementation the tests compare against.
"""

import numpy as np

cimport cython

ctypedef fused real:
    float
    double


def forward(x, w, int stride, int padding):
    return _forward(x, w, stride, padding)


def input_grad(gy, w, int stride, int padding, x_shape):
    return _input_grad(gy, w, stride, padding, x_shape)


def weight_grad(x, gy, int stride, int padding, w_shape):
    return _weight_grad(x, gy, stride, padding, w_shape)


def _forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, int stride, int padding):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = (h + 2 * padding - k) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * padding - k) // stride + 1
    out_np = np.zeros((b, o, ho, wo), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t bi, oi, ci, i, j, ki, kj, ii, jj
    cdef real acc
    for bi in range(b):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0
                    for ci in range(c):
                        for ki in range(k):
                            ii = i * stride + ki - padding
                            if ii < 0 or ii >= h:
                                continue
                            for kj in range(k):
                                jj = j * stride + kj - padding
                                if jj < 0 or jj >= wd:
                                    continue
                                acc += x[bi, ci, ii, jj] * w[oi, ci, ki, kj]
                    out[bi, oi, i, j] = acc
    return out_np


def _input_grad(real[:, :, :, ::1] gy, real[:, :, :, ::1] w, int stride,
                int padding, x_shape):
    cdef Py_ssize_t b = gy.shape[0], o = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t c = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t h = x_shape[2], wd = x_shape[3]
    gx_np = np.zeros(tuple(x_shape), dtype=np.asarray(gy).dtype)
    cdef real[:, :, :, ::1] gx = gx_np
    cdef Py_ssize_t bi, oi, ci, i, j, ki, kj, ii, jj
    cdef real g
    for bi in range(b):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    g = gy[bi, oi, i, j]
                    for ci in range(c):
                        for ki in range(k):
                            ii = i * stride + ki - padding
                            if ii < 0 or ii >= h:
                                continue
                            for kj in range(k):
                                jj = j * stride + kj - padding
                                if jj < 0 or jj >= wd:
                                    continue
                                gx[bi, ci, ii, jj] += g * w[oi, ci, ki, kj]
    return gx_np


def _weight_grad(real[:, :, :, ::1] x, real[:, :, :, ::1] gy, int stride,
                 int padding, w_shape):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t k = w_shape[2]
    gw_np = np.zeros(tuple(w_shape), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] gw = gw_np
    cdef Py_ssize_t bi, oi, ci, i, j, ki, kj, ii, jj
    cdef real g
    for bi in range(b):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    g = gy[bi, oi, i, j]
                    for ci in range(c):
                        for ki in range(k):
                            ii = i * stride + ki - padding
                            if ii < 0 or ii >= h:
                                continue
                            for kj in range(k):
                                jj = j * stride + kj - padding
                                if jj < 0 or jj >= wd:
                                    continue
                                gw[oi, ci, ki, kj] += g * x[bi, ci, ii, jj]
    return gw_np
