"""Pluggable feature extractors and the patch-crop geometry that maps
between frame pixels, patch pixels, feature cells and score cells.

Coordinate conventions: pixel/cell i sits at continuous coordinate i.
Patch pixel p maps to feature coordinate (p - (s-1)/2) / s for stride s,
and feature coordinate q maps to score coordinate q - (K-1)/2 for a KxK
filter, so the single (K-1)/2 offset is applied exactly once.
"""

import numpy as np

from .interp import bilinear_sample


class GradientHistogramExtractor:
    """Grayscale plus an 8-orientation gradient histogram, cell-averaged.

    feature_rms > 0 rescales each patch to that root-mean-square feature
    energy; the pooling-based filter initializer needs a stable feature
    scale to land its scores near the unit label peak.
    """

    def __init__(self, stride=4, orientations=8, gradient_gain=4.0, feature_rms=0.085):
        if stride < 1:
            raise ValueError("stride must be positive")
        self.stride = int(stride)
        self.orientations = int(orientations)
        self.gradient_gain = float(gradient_gain)
        self.feature_rms = float(feature_rms)
        self.channels = 1 + self.orientations

    def extract(self, patch):
        p = np.asarray(patch, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"image extractor needs a 2-D patch, got {p.shape}")
        h, w = p.shape
        s = self.stride
        if h % s or w % s:
            raise ValueError(f"patch {h}x{w} not divisible by stride {s}")
        ch, cw = h // s, w // s
        gy, gx = np.gradient(p)
        mag = np.hypot(gx, gy) * (self.gradient_gain / (s * s))
        theta = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
        bins = np.minimum(
            (theta / (2.0 * np.pi / self.orientations)).astype(np.intp),
            self.orientations - 1,
        )
        # cell-mean histogram in one bincount pass over (cell, orientation)
        rows = np.arange(h, dtype=np.intp) // s
        cols = np.arange(w, dtype=np.intp) // s
        cell = rows[:, None] * cw + cols[None, :]
        flat = cell * self.orientations + bins
        hist = np.bincount(
            flat.ravel(), weights=mag.ravel(), minlength=ch * cw * self.orientations
        ).reshape(ch, cw, self.orientations)
        gray = (p - 0.5).reshape(ch, s, cw, s).mean(axis=(1, 3))
        feat = np.concatenate([gray[..., None], hist], axis=2)
        if self.feature_rms > 0:
            feat *= self.feature_rms / (np.sqrt(np.mean(feat * feat)) + 1e-8)
        return feat


class IdentityExtractor:
    """Pass-through for precomputed feature maps (deep-feature regime)."""

    def __init__(self, stride=16, channels=None):
        self.stride = int(stride)
        self.channels = channels

    def extract(self, features):
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 3:
            raise ValueError(f"identity extractor needs (H, W, C), got {x.shape}")
        if self.channels is not None and x.shape[2] != self.channels:
            raise ValueError(
                f"expected {self.channels} channels, got {x.shape[2]}"
            )
        return x


def make_extractor(name, stride=None, channels=None, gradient_gain=4.0, feature_rms=0.085):
    if name == "gradhist":
        return GradientHistogramExtractor(
            stride=4 if stride is None else stride,
            gradient_gain=gradient_gain,
            feature_rms=feature_rms,
        )
    if name == "identity":
        return IdentityExtractor(
            stride=16 if stride is None else stride, channels=channels
        )
    raise ValueError(f"unknown extractor {name!r}")


class PatchGeometry:
    """Affine bookkeeping for one square crop: frame <-> patch <-> score."""

    def __init__(self, center, side, patch_size, stride, filter_k):
        self.cx, self.cy = float(center[0]), float(center[1])
        self.side = float(side)
        self.patch_size = int(patch_size)
        self.stride = int(stride)
        self.filter_k = int(filter_k)

    @property
    def pixels_per_patch_px(self):
        return self.side / self.patch_size

    def frame_to_patch(self, x, y):
        r = self.patch_size / self.side
        px = (x - (self.cx - self.side / 2.0)) * r - 0.5
        py = (y - (self.cy - self.side / 2.0)) * r - 0.5
        return px, py

    def patch_to_frame(self, px, py):
        r = self.side / self.patch_size
        x = (self.cx - self.side / 2.0) + (px + 0.5) * r
        y = (self.cy - self.side / 2.0) + (py + 0.5) * r
        return x, y

    def patch_to_score(self, px, py):
        s = self.stride
        off = (s - 1) / 2.0
        k_off = (self.filter_k - 1) / 2.0
        return (px - off) / s - k_off, (py - off) / s - k_off

    def score_to_patch(self, sx, sy):
        s = self.stride
        off = (s - 1) / 2.0
        k_off = (self.filter_k - 1) / 2.0
        return (sx + k_off) * s + off, (sy + k_off) * s + off

    def frame_to_score(self, x, y):
        return self.patch_to_score(*self.frame_to_patch(x, y))

    def score_to_frame(self, sx, sy):
        return self.patch_to_frame(*self.score_to_patch(sx, sy))

    def score_center(self):
        """Score coordinates of the crop center (the target at extraction time)."""
        mid = (self.patch_size - 1) / 2.0
        return self.patch_to_score(mid, mid)


def crop_patch(image, geometry):
    """Resample the square crop described by geometry, border-replicated."""
    p = geometry.patch_size
    idx = np.arange(p, dtype=np.float64)
    xs, _ = geometry.patch_to_frame(idx, np.zeros(p))
    _, ys = geometry.patch_to_frame(np.zeros(p), idx)
    return bilinear_sample(image, ys[:, None], xs[None, :])


def warp_patch(patch, rotation_deg=0.0, scale=1.0, flip=False):
    """Rotate/zoom/mirror a patch about its center (border replicate).

    scale > 1 magnifies the content; rotation is counterclockwise in image
    coordinates.
    """
    p = np.asarray(patch, dtype=np.float64)
    n = p.shape[0]
    mid = (n - 1) / 2.0
    theta = np.deg2rad(rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    # destination -> source: rotate by -theta, then unscale
    rows = (np.arange(n, dtype=np.float64) - mid)[:, None]
    cols = (np.arange(n, dtype=np.float64) - mid)[None, :]
    src_r = (c * rows - s * cols) / scale + mid
    src_c = (s * rows + c * cols) / scale + mid
    if flip:
        src_c = (n - 1) - src_c
    return bilinear_sample(p, src_r, src_c)


def shift_patch(patch, dy, dx):
    """Translate patch content by (+dy, +dx) pixels, border replicated."""
    p = np.asarray(patch, dtype=np.float64)
    rows = np.arange(p.shape[0], dtype=np.float64)[:, None] - dy
    cols = np.arange(p.shape[1], dtype=np.float64)[None, :] - dx
    return bilinear_sample(p, rows, np.broadcast_to(cols, (p.shape[0], p.shape[1])))
