"""The discriminative learning loss over score maps.

The regression label y, spatial weight v and target mask m are radial
fields around the target center, each parametrized by coefficients on a
grid of triangular basis functions of knot spacing delta. The residual
blends least-squares behavior (where m -> 1) with a hinge that ignores
easy negatives (where m -> 0):

    r = v * (m * s + (1 - m) * max(0, s) - y)

The total loss over a sample set is the weighted mean of ||r||^2 plus
||lambda * f||^2, and both its gradient in the filter and the
Gauss-Newton curvature g'Qg (Q = J'J) have closed forms built from the
valid convolution and its adjoint.
"""

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .numerics import ShapeError, as_scoremap, as_tensor3

Fields = namedtuple("Fields", ["y", "v", "m"])

_TRANSFORMS = ("identity", "sigmoid")


def _sigmoid(z):
    # asymmetric clamp: keeps outputs strictly inside (0,1) in float64 while
    # letting the mask vanish to underflow level so fully-hinged cells are
    # exactly silent in the loss
    z = np.clip(z, -700.0, 36.0)
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class RadialFunction:
    """Radial profile sum_k phi_k rho_k(d), optionally squashed by a sigmoid."""

    coefficients: np.ndarray
    knot_spacing: float
    output_transform: str = "identity"

    def __post_init__(self):
        coeffs = np.ascontiguousarray(self.coefficients, dtype=np.float64)
        if coeffs.ndim != 1 or coeffs.size < 2:
            raise ValueError("need a 1-D coefficient vector with at least 2 knots")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        if not self.knot_spacing > 0:
            raise ValueError("knot_spacing must be positive")
        if self.output_transform not in _TRANSFORMS:
            raise ValueError(f"unknown output_transform {self.output_transform!r}")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def n(self):
        return self.coefficients.size

    @property
    def knots(self):
        return np.arange(self.n) * self.knot_spacing


def rbf_basis(d, n, delta):
    """Evaluate all n triangular basis functions at distances d, shape (..., n).

    Basis k < n-1 is a hat of half-width delta centered at k*delta; the last
    basis is a ramp that saturates at 1 for d >= (n-1)*delta, so the knots
    form a partition of unity on [0, inf).
    """
    d = np.asarray(d, dtype=np.float64)
    t = d[..., None] - np.arange(n) * delta
    out = np.maximum(0.0, 1.0 - np.abs(t) / delta)
    out[..., -1] = np.clip(1.0 + t[..., -1] / delta, 0.0, 1.0)
    return out


def rbf_eval(rf, d):
    """Evaluate a RadialFunction at distance(s) d >= 0."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("radial distance must be nonnegative")
    # partition of unity makes the basis sum a clamped linear interpolation
    # of the coefficients at the knots
    z = np.interp(d, rf.knots, rf.coefficients)
    if rf.output_transform == "sigmoid":
        z = _sigmoid(np.asarray(z))
    return float(z) if np.isscalar(d) or d.ndim == 0 else z


@dataclass(frozen=True)
class LossParams:
    """All free parameters of the loss: the three radial fields and lambda."""

    label_fn: RadialFunction
    weight_fn: RadialFunction
    mask_fn: RadialFunction
    lam: float

    def __post_init__(self):
        fns = (self.label_fn, self.weight_fn, self.mask_fn)
        if len({f.n for f in fns}) != 1 or len({f.knot_spacing for f in fns}) != 1:
            raise ValueError("label, weight and mask functions must share n and delta")
        if self.mask_fn.output_transform != "sigmoid":
            raise ValueError("mask function must use the sigmoid transform")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be finite and nonnegative")

    @property
    def n(self):
        return self.label_fn.n

    @property
    def knot_spacing(self):
        return self.label_fn.knot_spacing


def init_loss_params(n, delta, sigma, lam=0.01, mask_center=3.0, mask_width=1.0):
    """Default parameter state before any fitting.

    The label profile samples a Gaussian of std sigma at the knots, the
    weight profile is constant 1, and the mask follows the scaled-tanh
    transition 0.5*(1 - tanh((d - mask_center)/mask_width)). Since that
    equals sigmoid(-2*(d - mask_center)/mask_width), the mask logits are
    linear in d and the knot parametrization reproduces it exactly.
    """
    if n < 2:
        raise ValueError("need at least 2 knots")
    knots = np.arange(n) * delta
    phi_y = np.exp(-(knots**2) / (2.0 * sigma**2))
    phi_v = np.ones(n)
    phi_m = -2.0 * (knots - mask_center) / mask_width
    return LossParams(
        label_fn=RadialFunction(phi_y, delta, "identity"),
        weight_fn=RadialFunction(phi_v, delta, "identity"),
        mask_fn=RadialFunction(phi_m, delta, "sigmoid"),
        lam=lam,
    )


def build_fields(params, center, score_shape):
    """Sample the three radial fields on the integer grid of a score map.

    center is (row, col) in continuous score-map coordinates; distances are
    measured in score cells.
    """
    h, w = int(score_shape[0]), int(score_shape[1])
    if h < 1 or w < 1:
        raise ShapeError(f"score shape must be positive, got {(h, w)}")
    cy, cx = float(center[0]), float(center[1])
    d = np.hypot(
        np.arange(h, dtype=np.float64)[:, None] - cy,
        np.arange(w, dtype=np.float64)[None, :] - cx,
    )
    return Fields(
        y=rbf_eval(params.label_fn, d),
        v=rbf_eval(params.weight_fn, d),
        m=rbf_eval(params.mask_fn, d),
    )


def _residual_core(s, y, v, m):
    return v * (m * s + (1.0 - m) * np.maximum(0.0, s) - y)


def _q_core(s, v, m):
    # pointwise derivative of the residual in s (subgradient 1_{s>0} at the kink)
    return v * (m + (1.0 - m) * (s > 0))


def residual(s, fields):
    """Pointwise residual r = v * (m*s + (1-m)*max(0,s) - y)."""
    s = as_scoremap(s)
    y, v, m = fields
    if y.shape != s.shape or v.shape != s.shape or m.shape != s.shape:
        raise ShapeError(f"fields {y.shape} do not match scores {s.shape}")
    return _residual_core(s, y, v, m)


@dataclass
class TrainingSample:
    """One feature map with its target center (score coordinates) and weight."""

    features: np.ndarray
    center: tuple
    weight: float = 1.0

    def __post_init__(self):
        self.features = as_tensor3(self.features)
        self.center = (float(self.center[0]), float(self.center[1]))
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise ValueError("sample weight must be finite and nonnegative")


class SampleSet:
    """Ordered sample memory with FIFO eviction beyond a fixed capacity."""

    def __init__(self, capacity, samples=()):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = int(capacity)
        self._samples = []
        for s in samples:
            self.add(s)

    def add(self, sample):
        self._samples.append(sample)
        if len(self._samples) > self.capacity:
            del self._samples[0]

    @property
    def samples(self):
        return list(self._samples)

    def __len__(self):
        return len(self._samples)

    def __iter__(self):
        return iter(self._samples)

    def __getitem__(self, i):
        return self._samples[i]


class PreparedProblem:
    """Loss terms for a fixed (sample set, params, filter shape) triple.

    Precomputes the per-sample fields once so the optimizer recursions can
    reuse them; all public loss/gradient/curvature functions route through
    here so there is a single source for the formulas.
    """

    def __init__(self, samples, params, filter_shape):
        entries = list(samples)
        if not entries:
            raise ValueError("sample set is empty")
        kh, kw = int(filter_shape[0]), int(filter_shape[1])
        kc = int(filter_shape[2])
        self.filter_shape = (kh, kw, kc)
        self.lam = float(params.lam)
        self.entries = []
        for smp in entries:
            x = smp.features
            if x.shape[2] != kc:
                raise ShapeError(
                    f"sample has {x.shape[2]} channels, filter has {kc}"
                )
            sshape = numerics.score_shape(x.shape, (kh, kw))
            flds = build_fields(params, smp.center, sshape)
            self.entries.append((x, float(smp.weight), flds))
        self.wsum = sum(w for _, w, _ in self.entries)
        if self.wsum <= 0:
            raise ValueError("sample weights sum to zero")
        # uniform sample shapes take a stacked path through the batched kernels
        self._stacked = len({e[0].shape for e in self.entries}) == 1
        if self._stacked:
            self._xs = np.stack([e[0] for e in self.entries])
            self._w = np.array([e[1] for e in self.entries])
            self._ys = np.stack([e[2].y for e in self.entries])
            self._vs = np.stack([e[2].v for e in self.entries])
            self._ms = np.stack([e[2].m for e in self.entries])

    def scores(self, f):
        if self._stacked:
            return numerics.conv_valid_many(self._xs, f)
        return [numerics.conv_valid(x, f) for x, _, _ in self.entries]

    def loss_from_scores(self, f, scores):
        if self._stacked:
            r = _residual_core(scores, self._ys, self._vs, self._ms)
            acc = float(self._w @ np.sum(r * r, axis=(1, 2)))
        else:
            acc = 0.0
            for (x, w, flds), s in zip(self.entries, scores):
                r = residual(s, flds)
                acc += w * numerics.norm_sq(r)
        return acc / self.wsum + self.lam**2 * numerics.norm_sq(f)

    def gradient_from_scores(self, f, scores):
        reg = 2.0 * self.lam**2 * f
        if self._stacked:
            r = _residual_core(scores, self._ys, self._vs, self._ms)
            q = _q_core(scores, self._vs, self._ms)
            return reg + numerics.conv_transpose_acc(
                self._xs, q * r, 2.0 * self._w / self.wsum, f.shape
            )
        g = reg
        for (x, w, flds), s in zip(self.entries, scores):
            y, v, m = flds
            r = residual(s, flds)
            q = _q_core(s, v, m)
            g = g + (2.0 * w / self.wsum) * numerics.conv_transpose(x, q * r, f.shape)
        return g

    def h_norm_sq_from_scores(self, scores, g):
        if self._stacked:
            q = _q_core(scores, self._vs, self._ms)
            sg = numerics.conv_valid_many(self._xs, g)
            acc = float(self._w @ np.sum((q * sg) ** 2, axis=(1, 2))) / self.wsum
            return acc + self.lam**2 * numerics.norm_sq(g)
        acc = 0.0
        for (x, w, flds), s in zip(self.entries, scores):
            y, v, m = flds
            q = _q_core(s, v, m)
            acc += (w / self.wsum) * numerics.norm_sq(q * numerics.conv_valid(x, g))
        return acc + self.lam**2 * numerics.norm_sq(g)

    def loss(self, f):
        return self.loss_from_scores(f, self.scores(f))


def _prepare(f, samples, params):
    f = as_tensor3(f)
    return f, PreparedProblem(samples, params, f.shape)


def loss(f, samples, params):
    """Weighted mean of per-sample ||r||^2 plus ||lambda f||^2."""
    f, prob = _prepare(f, samples, params)
    return prob.loss(f)


def gradient(f, samples, params):
    """Closed-form loss gradient in the filter.

    Per sample this is 2w/W * conv_transpose(x, q*r) with the pointwise
    derivative q = v * (m + (1-m) * [s > 0]), plus 2 lambda^2 f.
    """
    f, prob = _prepare(f, samples, params)
    return prob.gradient_from_scores(f, prob.scores(f))


def h_norm_sq(f, g, samples, params):
    """Gauss-Newton curvature g'Qg = ||Jg||^2 evaluated at the scores of f.

    Computed without forming J: mean of w*||q * (x conv g)||^2 plus
    lambda^2 ||g||^2.
    """
    f, prob = _prepare(f, samples, params)
    g = as_tensor3(g)
    if g.shape != f.shape:
        raise ShapeError(f"direction shape {g.shape} != filter shape {f.shape}")
    return prob.h_norm_sq_from_scores(prob.scores(f), g)


def save_loss_params(params, path):
    """Write params as plain text: keys n, delta, lambda, phi_y, phi_v, phi_m."""
    lines = [
        f"n {params.n}",
        f"delta {float(params.knot_spacing)!r}",
        f"lambda {float(params.lam)!r}",
        "phi_y " + " ".join(repr(float(v)) for v in params.label_fn.coefficients),
        "phi_v " + " ".join(repr(float(v)) for v in params.weight_fn.coefficients),
        "phi_m " + " ".join(repr(float(v)) for v in params.mask_fn.coefficients),
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_loss_params(path):
    data = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            if key in data:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            data[key] = rest.strip()
    missing = {"n", "delta", "lambda", "phi_y", "phi_v", "phi_m"} - set(data)
    if missing:
        raise ValueError(f"{path}: missing keys {sorted(missing)}")
    n = int(data["n"])
    delta = float(data["delta"])
    arrays = {}
    for key in ("phi_y", "phi_v", "phi_m"):
        arr = np.array([float(v) for v in data[key].split()])
        if arr.size != n:
            raise ValueError(f"{path}: {key} has {arr.size} values, expected {n}")
        arrays[key] = arr
    return LossParams(
        label_fn=RadialFunction(arrays["phi_y"], delta, "identity"),
        weight_fn=RadialFunction(arrays["phi_v"], delta, "identity"),
        mask_fn=RadialFunction(arrays["phi_m"], delta, "sigmoid"),
        lam=float(data["lambda"]),
    )
