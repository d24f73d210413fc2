"""Pure-numpy convolution kernels (im2col + BLAS through tensordot).

Inputs are already padded. Shapes: x [B, C, Hp, Wp], w [O, C, kh, kw].
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, kh, kw, stride):
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # B, C, Ho', Wo', kh, kw
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride):
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(x, kh, kw, stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B, Ho, Wo, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gout, stride):
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = gout.shape[2], gout.shape[3]
    win = _windows(x, kh, kw, stride)
    gw = np.tensordot(gout, win, axes=([0, 2, 3], [0, 2, 3]))  # O, C, kh, kw
    gcols = np.tensordot(gout, w, axes=([1], [0]))  # B, Ho, Wo, C, kh, kw
    gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
    gx = np.zeros_like(x)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + hspan:stride, j:j + wspan:stride] += gcols[..., i, j]
    return gx, gw
