# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels: im2col/col2im loops in C, products via BLAS dgemm.

Same contract as ``_conv_py``: x is pre-padded [B, C, Hp, Wp], w is [O, C, kh, kw].
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _im2col(const double[:, :, ::1] x, double[:, ::1] cols,
                  int kh, int kw, int stride, int ho, int wo) noexcept nogil:
    cdef int c, i, j, oy, ox, row
    cdef int C = x.shape[0]
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for oy in range(ho):
                    for ox in range(wo):
                        cols[row, oy * wo + ox] = x[c, oy * stride + i, ox * stride + j]


cdef void _col2im(const double[:, ::1] cols, double[:, :, ::1] gx,
                  int kh, int kw, int stride, int ho, int wo) noexcept nogil:
    cdef int c, i, j, oy, ox, row
    cdef int C = gx.shape[0]
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for oy in range(ho):
                    for ox in range(wo):
                        gx[c, oy * stride + i, ox * stride + j] += cols[row, oy * wo + ox]


def conv2d_forward(x_in, w_in, int stride):
    cdef const double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64).reshape(w_in.shape[0], -1)
    cdef int B = x.shape[0], C = x.shape[1], hp = x.shape[2], wp = x.shape[3]
    cdef int O = w_in.shape[0], kh = w_in.shape[2], kw = w_in.shape[3]
    cdef int ho = (hp - kh) // stride + 1, wo = (wp - kw) // stride + 1
    cdef int K = C * kh * kw, P = ho * wo
    out_arr = np.empty((B, O, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[:, ::1] cols = np.empty((K, P), dtype=np.float64)
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N'
    cdef int b
    for b in range(B):
        _im2col(x[b], cols, kh, kw, stride, ho, wo)
        # column-major: out_b^T (P x O) = cols^T (P x K) @ w^T (K x O)
        dgemm(&tn, &tn, &P, &O, &K, &one, &cols[0, 0], &P, &w[0, 0], &K,
              &zero, &out[b, 0, 0, 0], &P)
    return out_arr


def conv2d_backward(x_in, w_in, gout_in, int stride):
    cdef const double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64).reshape(w_in.shape[0], -1)
    cdef const double[:, :, :, ::1] gout = np.ascontiguousarray(gout_in, dtype=np.float64)
    cdef int B = x.shape[0], C = x.shape[1]
    cdef int O = w_in.shape[0], kh = w_in.shape[2], kw = w_in.shape[3]
    cdef int ho = gout.shape[2], wo = gout.shape[3]
    cdef int K = C * kh * kw, P = ho * wo
    gx_arr = np.zeros(x_in.shape, dtype=np.float64)
    gw_arr = np.zeros((O, K), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double[:, ::1] cols = np.empty((K, P), dtype=np.float64)
    cdef double[:, ::1] gcols = np.empty((K, P), dtype=np.float64)
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N', tt = b'T'
    cdef int b
    for b in range(B):
        _im2col(x[b], cols, kh, kw, stride, ho, wo)
        # gw^T (K x O) += cols^T^T (K x P) @ gout_b^T (P x O)
        dgemm(&tt, &tn, &K, &O, &P, &one, &cols[0, 0], &P, <double*>&gout[b, 0, 0, 0], &P,
              &one, &gw[0, 0], &K)
        # gcols^T (P x K) = gout_b^T (P x O) @ w (O x K)
        dgemm(&tn, &tt, &P, &K, &O, &one, <double*>&gout[b, 0, 0, 0], &P, &w[0, 0], &K,
              &zero, &gcols[0, 0], &P)
        _col2im(gcols, gx[b], kh, kw, stride, ho, wo)
    return gx_arr, gw_arr.reshape(w_in.shape)
