"""Dense-tensor substrate: multi-channel valid convolution, its adjoint, and
the handful of elementwise reductions every other module is built on.

Feature maps and filters are float64 numpy arrays of shape (H, W, C),
C-contiguous so the channel index is fastest; score maps are (H, W). The
inner loops live in a compiled extension (dfp._ckernels) with a numpy
fallback (dfp._pykernels); the backend is picked once at import and can be
forced with DFP_BACKEND=c|py.
"""

import os

import numpy as np

from . import _pykernels


class ShapeError(ValueError):
    """Operand dimensions are incompatible with the requested operation."""


def _load_backend(name):
    if name == "py":
        return _pykernels
    from . import _ckernels

    return _ckernels


_env = os.environ.get("DFP_BACKEND", "auto").lower()
if _env in ("auto", ""):
    try:
        _impl = _load_backend("c")
        BACKEND = "c"
    except ImportError:
        _impl = _pykernels
        BACKEND = "py"
elif _env in ("c", "py"):
    _impl = _load_backend(_env)
    BACKEND = _env
else:
    raise ValueError(f"DFP_BACKEND must be 'auto', 'c' or 'py', got {_env!r}")


def available_backends():
    """Names of kernel backends importable in this environment."""
    names = ["py"]
    try:
        _load_backend("c")
        names.insert(0, "c")
    except ImportError:
        pass
    return names


def backend_module(name):
    return _load_backend(name)


def as_tensor3(a):
    """Validate and coerce to a C-contiguous float64 (H, W, C) array."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise ShapeError(f"expected a (H, W, C) array, got shape {a.shape}")
    if min(a.shape) < 1:
        raise ShapeError(f"empty tensor dimensions: {a.shape}")
    return a


def as_scoremap(a):
    """Validate and coerce to a C-contiguous float64 (H, W) array."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a (H, W) array, got shape {a.shape}")
    if min(a.shape) < 1:
        raise ShapeError(f"empty map dimensions: {a.shape}")
    return a


def score_shape(x_shape, f_shape):
    """Valid-convolution output shape for feature shape x and filter shape f."""
    ho = x_shape[0] - f_shape[0] + 1
    wo = x_shape[1] - f_shape[1] + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"filter {f_shape[:2]} larger than features {x_shape[:2]}")
    return (ho, wo)


def conv_valid(x, f, backend=None):
    """Valid cross-correlation: out[i,j] = sum_{u,v,k} x[i+u,j+v,k] * f[u,v,k]."""
    x = as_tensor3(x)
    f = as_tensor3(f)
    if f.shape[2] != x.shape[2]:
        raise ShapeError(f"channel mismatch: x has {x.shape[2]}, f has {f.shape[2]}")
    score_shape(x.shape, f.shape)
    impl = _impl if backend is None else _load_backend(backend)
    return impl.conv_valid(x, f)


def conv_transpose(x, g, filter_shape, backend=None):
    """Adjoint of conv_valid in f: out[u,v,k] = sum_{i,j} x[i+u,j+v,k] * g[i,j].

    filter_shape is (Kh, Kw) or (Kh, Kw, C); output has shape (Kh, Kw, C).
    """
    x = as_tensor3(x)
    g = as_scoremap(g)
    kh, kw = filter_shape[0], filter_shape[1]
    if len(filter_shape) > 2 and filter_shape[2] != x.shape[2]:
        raise ShapeError(
            f"channel mismatch: x has {x.shape[2]}, filter_shape has {filter_shape[2]}"
        )
    if score_shape(x.shape, (kh, kw)) != g.shape:
        raise ShapeError(
            f"score map {g.shape} does not match valid output "
            f"{score_shape(x.shape, (kh, kw))} for features {x.shape[:2]} "
            f"and filter {(kh, kw)}"
        )
    impl = _impl if backend is None else _load_backend(backend)
    return impl.conv_transpose(x, g, kh, kw)


def conv_valid_many(xs, f, backend=None):
    """conv_valid of one filter against a stack of same-shaped feature maps."""
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    f = as_tensor3(f)
    if xs.ndim != 4:
        raise ShapeError(f"expected a (N, H, W, C) stack, got shape {xs.shape}")
    if xs.shape[3] != f.shape[2]:
        raise ShapeError(f"channel mismatch: xs has {xs.shape[3]}, f has {f.shape[2]}")
    score_shape(xs.shape[1:], f.shape)
    impl = _impl if backend is None else _load_backend(backend)
    return impl.conv_valid_many(xs, f)


def conv_transpose_acc(xs, gs, coeffs, filter_shape, backend=None):
    """Weighted sum over a stack: sum_j coeffs[j] * conv_transpose(xs[j], gs[j])."""
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    gs = np.ascontiguousarray(gs, dtype=np.float64)
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    kh, kw = filter_shape[0], filter_shape[1]
    if xs.ndim != 4 or gs.ndim != 3 or coeffs.ndim != 1:
        raise ShapeError("conv_transpose_acc needs (N,H,W,C) xs, (N,Ho,Wo) gs, (N,) coeffs")
    if not xs.shape[0] == gs.shape[0] == coeffs.shape[0]:
        raise ShapeError("stack length mismatch")
    if score_shape(xs.shape[1:], (kh, kw)) != gs.shape[1:]:
        raise ShapeError(
            f"score stack {gs.shape[1:]} does not match valid output "
            f"{score_shape(xs.shape[1:], (kh, kw))}"
        )
    impl = _impl if backend is None else _load_backend(backend)
    return impl.conv_transpose_acc(xs, gs, coeffs, kh, kw)


def _check_same_shape(arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ShapeError(f"shape mismatch: {shape} vs {np.shape(a)}")


def elementwise(fn, *arrays):
    """Apply fn pointwise to same-shaped arrays."""
    if not arrays:
        raise ValueError("elementwise needs at least one operand")
    _check_same_shape(arrays)
    return fn(*(np.asarray(a, dtype=np.float64) for a in arrays))


def dot(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape((a, b))
    return float(np.vdot(a, b))


def norm_sq(a):
    a = np.asarray(a, dtype=np.float64)
    return float(np.vdot(a, a))
