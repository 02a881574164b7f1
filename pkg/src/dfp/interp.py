"""Bilinear sampling, resampling and small separable blurs shared by the
filter initializer and the feature pipeline. Sample i of an axis lives at
continuous coordinate i; out-of-range coordinates clamp to the border."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def bilinear_sample(img, rows, cols):
    """Sample img at continuous (row, col) positions with border clamping.

    img is (H, W) or (H, W, C); rows/cols broadcast to the output grid shape.
    """
    img = np.asarray(img, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    h, w = img.shape[0], img.shape[1]
    r = np.clip(rows, 0.0, h - 1.0)
    c = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(c).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = r - r0
    fc = c - c0
    if img.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    top = img[r0, c0] * (1.0 - fc) + img[r0, c1] * fc
    bot = img[r1, c0] * (1.0 - fc) + img[r1, c1] * fc
    return top * (1.0 - fr) + bot * fr


def resample(img, out_h, out_w):
    """Resize with the half-pixel (align_corners=False) convention."""
    h, w = img.shape[0], img.shape[1]
    rows = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    return bilinear_sample(img, rows[:, None], cols[None, :])


def warp_affine(img, matrix, offset, out_shape):
    """Sample img at A @ (i, j) + b for every output pixel (i, j)."""
    a = np.asarray(matrix, dtype=np.float64)
    b = np.asarray(offset, dtype=np.float64)
    ii, jj = np.meshgrid(
        np.arange(out_shape[0], dtype=np.float64),
        np.arange(out_shape[1], dtype=np.float64),
        indexing="ij",
    )
    rows = a[0, 0] * ii + a[0, 1] * jj + b[0]
    cols = a[1, 0] * ii + a[1, 1] * jj + b[1]
    return bilinear_sample(img, rows, cols)


def gaussian_kernel(sigma):
    radius = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t**2) / (2.0 * sigma**2))
    return k / k.sum()


def _blur_axis0(img, kernel):
    radius = len(kernel) // 2
    pad = [(radius, radius)] + [(0, 0)] * (img.ndim - 1)
    padded = np.pad(img, pad, mode="edge")
    win = sliding_window_view(padded, len(kernel), axis=0)
    return win @ kernel


def gaussian_blur(img, sigma):
    """Separable Gaussian blur with edge-replicated borders."""
    if sigma <= 0:
        return np.asarray(img, dtype=np.float64).copy()
    k = gaussian_kernel(sigma)
    out = _blur_axis0(np.asarray(img, dtype=np.float64), k)
    out = np.moveaxis(_blur_axis0(np.moveaxis(out, 1, 0), k), 0, 1)
    return out
