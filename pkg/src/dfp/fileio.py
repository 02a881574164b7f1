"""Readers and writers for the on-disk formats: binary PGM/PPM images,
the DFM1 feature-map container, and plain-text annotation files."""

import struct

import numpy as np

DFM1_MAGIC = b"DFM1"


class DataError(ValueError):
    """A data file exists but its contents are malformed."""


# ---------------------------------------------------------------------------
# netpbm images (P5 grayscale / P6 color, 8-bit binary)


def _read_pnm_tokens(data, count, path):
    """Read header tokens, skipping whitespace and # comments; returns
    (tokens, offset just past the single whitespace after the last token)."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise DataError(f"{path}: truncated header")
        tokens.append(data[start:i])
    if i >= n or not data[i : i + 1].isspace():
        raise DataError(f"{path}: missing whitespace after header")
    return tokens, i + 1


def read_image(path):
    """Read a binary PGM (P5) or PPM (P6) as grayscale float64 in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P5", b"P6"):
        raise DataError(f"{path}: not a binary PGM/PPM (magic {data[:2]!r})")
    channels = 1 if data[:2] == b"P5" else 3
    tokens, offset = _read_pnm_tokens(data[2:], 3, path)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric header field") from exc
    if width < 1 or height < 1:
        raise DataError(f"{path}: bad dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise DataError(f"{path}: only 8-bit images supported (maxval {maxval})")
    raster = data[2 + offset :]
    expected = width * height * channels
    if len(raster) != expected:
        raise DataError(
            f"{path}: raster has {len(raster)} bytes, expected {expected}"
        )
    img = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / maxval
    if channels == 1:
        return img.reshape(height, width)
    rgb = img.reshape(height, width, 3)
    # Rec. 601 luma
    return rgb @ np.array([0.299, 0.587, 0.114])


def write_pgm(path, img, maxval=255):
    """Write a float image in [0, 1] as binary 8-bit PGM."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM writer needs a 2-D image, got shape {img.shape}")
    quant = np.clip(np.rint(img * maxval), 0, maxval).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + quant.tobytes())


# ---------------------------------------------------------------------------
# DFM1 feature maps: magic 'DFM1', u32 H W C (little endian), float32
# payload row-major with channel fastest


def read_dfm1(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != DFM1_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}, expected {DFM1_MAGIC!r}")
    if len(data) < 16:
        raise DataError(f"{path}: truncated header")
    h, w, c = struct.unpack_from("<III", data, 4)
    if min(h, w, c) < 1:
        raise DataError(f"{path}: bad dimensions {h}x{w}x{c}")
    expected = 16 + 4 * h * w * c
    if len(data) != expected:
        raise DataError(f"{path}: file has {len(data)} bytes, expected {expected}")
    payload = np.frombuffer(data, dtype="<f4", offset=16)
    return payload.reshape(h, w, c).astype(np.float64)


def write_dfm1(path, features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ValueError(f"DFM1 writer needs (H, W, C), got shape {features.shape}")
    h, w, c = features.shape
    with open(path, "wb") as fh:
        fh.write(DFM1_MAGIC + struct.pack("<III", h, w, c))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# annotations: one line per frame, 'frame_index cx cy w h' in pixels


def read_annotations(path):
    boxes = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise DataError(
                    f"{path}:{lineno}: expected 'frame_index cx cy w h', got {len(parts)} fields"
                )
            try:
                idx = int(parts[0])
                cx, cy, w, h = (float(p) for p in parts[1:])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric field") from exc
            if idx in boxes:
                raise DataError(f"{path}:{lineno}: duplicate frame index {idx}")
            boxes[idx] = (cx, cy, w, h)
    return boxes


def write_annotations(path, boxes):
    with open(path, "w", encoding="utf-8") as fh:
        for idx in sorted(boxes):
            cx, cy, w, h = boxes[idx]
            fh.write(f"{idx} {cx!r} {cy!r} {w!r} {h!r}\n")
