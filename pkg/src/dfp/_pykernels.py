"""NumPy fallback for the convolution kernels (used when the compiled
extension is unavailable, or when forced via DFP_BACKEND=py)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_valid(x, f):
    # windows: (Ho, Wo, C, Kh, Kw) view, no copy
    win = sliding_window_view(x, (f.shape[0], f.shape[1]), axis=(0, 1))
    return np.einsum("ijcuv,uvc->ij", win, f, optimize=True)


def conv_transpose(x, g, kh, kw):
    # adjoint windows: (Kh, Kw, C, Ho, Wo)
    win = sliding_window_view(x, (g.shape[0], g.shape[1]), axis=(0, 1))
    return np.einsum("uvcij,ij->uvc", win, g, optimize=True)


def conv_valid_many(xs, f):
    win = sliding_window_view(xs, (f.shape[0], f.shape[1]), axis=(1, 2))
    return np.einsum("nijcuv,uvc->nij", win, f, optimize=True)


def conv_transpose_acc(xs, gs, coeffs, kh, kw):
    win = sliding_window_view(xs, (gs.shape[1], gs.shape[2]), axis=(1, 2))
    return np.einsum("nuvcij,nij,n->uvc", win, gs, coeffs, optimize=True)
