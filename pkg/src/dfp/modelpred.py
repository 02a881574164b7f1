"""Model predictor: pooling-based filter initialization followed by
steepest-descent recursions whose step length exactly minimizes the local
Gauss-Newton quadratic along the gradient."""

from dataclasses import dataclass

import numpy as np

from . import numerics
from .interp import bilinear_sample
from .lossmodel import PreparedProblem, as_tensor3

_TINY_CURVATURE = 1e-30


class SingularCurvatureError(RuntimeError):
    """Raised when the curvature along a nonzero gradient vanishes
    (structurally impossible for lambda > 0)."""


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    grad_norm: float | None = None
    alpha: float | None = None
    filter: np.ndarray | None = None


class OptimizerTrace:
    """Per-iteration log of the optimizer, including the initial filter."""

    def __init__(self):
        self.records = []

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def losses(self):
        return [r.loss for r in self.records]

    @property
    def alphas(self):
        return [r.alpha for r in self.records]

    @property
    def filters(self):
        return [r.filter for r in self.records]


def roi_pool(features, box, out_shape):
    """Pool a continuous box region to out_shape bins.

    box is (cx, cy, w, h) in feature-grid coordinates (sample i at
    coordinate i, x along columns). Each bin is read at its center with
    bilinear interpolation, so a box exactly covering an integer-aligned
    window copies it verbatim.
    """
    cx, cy, w, h = (float(v) for v in box)
    if w * h < 1.0:
        raise ValueError(f"degenerate target box: {w}x{h} is under one cell^2")
    kh, kw = int(out_shape[0]), int(out_shape[1])
    rows = cy - h / 2.0 + (np.arange(kh) + 0.5) * (h / kh)
    cols = cx - w / 2.0 + (np.arange(kw) + 0.5) * (w / kw)
    return bilinear_sample(features, rows[:, None], cols[None, :])


def init_filter(samples, filter_shape, target_boxes):
    """Average of per-sample target-region poolings; uses target appearance only."""
    samples = list(samples)
    boxes = list(target_boxes)
    if not samples:
        raise ValueError("sample set is empty")
    if len(boxes) != len(samples):
        raise ValueError(f"{len(samples)} samples but {len(boxes)} boxes")
    kh, kw, kc = int(filter_shape[0]), int(filter_shape[1]), int(filter_shape[2])
    acc = np.zeros((kh, kw, kc))
    for smp, box in zip(samples, boxes):
        x = smp.features
        if x.shape[2] != kc:
            raise numerics.ShapeError(
                f"sample has {x.shape[2]} channels, filter expects {kc}"
            )
        acc += roi_pool(x, box, (kh, kw))
    return acc / len(samples)


def _sd_alpha(prob, scores, g, gn2, fixed_step_beta):
    if fixed_step_beta is not None:
        # identity curvature surrogate: plain gradient descent, alpha = beta
        return float(fixed_step_beta)
    h2 = prob.h_norm_sq_from_scores(scores, g)
    if h2 == 0.0:
        raise SingularCurvatureError("zero curvature along a nonzero gradient")
    # the Gauss-Newton model of this loss has Hessian 2 J'J, so the exact
    # line minimum along -g sits at ||g||^2 / (2 ||Jg||^2)
    return gn2 / max(2.0 * h2, _TINY_CURVATURE)


def steepest_descent_step(f, samples, params, fixed_step_beta=None, prepared=None):
    """One recursion: returns (new filter, alpha, diagnostics)."""
    f = as_tensor3(f)
    prob = prepared if prepared is not None else PreparedProblem(samples, params, f.shape)
    scores = prob.scores(f)
    loss = prob.loss_from_scores(f, scores)
    g = prob.gradient_from_scores(f, scores)
    gn2 = numerics.norm_sq(g)
    diag = {"loss": loss, "grad_norm": float(np.sqrt(gn2))}
    if gn2 == 0.0:
        return f, 0.0, diag
    alpha = _sd_alpha(prob, scores, g, gn2, fixed_step_beta)
    return f - alpha * g, alpha, diag


def gradient_descent_step(f, samples, params, step_lengths, prepared=None):
    """Fixed-step baseline: f - alpha (*) g with scalar or per-coefficient alpha."""
    f = as_tensor3(f)
    prob = prepared if prepared is not None else PreparedProblem(samples, params, f.shape)
    alpha = np.asarray(step_lengths, dtype=np.float64)
    if alpha.ndim != 0 and alpha.shape != f.shape:
        raise numerics.ShapeError(
            f"step lengths shape {alpha.shape} must be scalar or {f.shape}"
        )
    g = prob.gradient_from_scores(f, prob.scores(f))
    return f - alpha * g


def predict_model(
    samples,
    params,
    n_iter,
    f0=None,
    target_boxes=None,
    filter_shape=None,
    method="sd",
    gd_step_lengths=None,
    fixed_step_beta=None,
    store_filters=False,
):
    """Run the model predictor: initialize (or take f0) and recurse n_iter times.

    The trace records every iterate including the initial one. method 'sd'
    uses the Gauss-Newton step length, 'gd' uses gd_step_lengths; n_iter = 0
    returns the initializer output untouched.
    """
    if n_iter < 0:
        raise ValueError("n_iter must be nonnegative")
    if f0 is None:
        if target_boxes is None or filter_shape is None:
            raise ValueError("need target_boxes and filter_shape when f0 is omitted")
        f = init_filter(samples, filter_shape, target_boxes)
    else:
        f = as_tensor3(f0)
    if method not in ("sd", "gd"):
        raise ValueError(f"unknown method {method!r}")
    if method == "gd" and gd_step_lengths is None:
        raise ValueError("method 'gd' needs gd_step_lengths")

    prob = PreparedProblem(samples, params, f.shape)
    trace = OptimizerTrace()
    for i in range(n_iter):
        scores = prob.scores(f)
        loss = prob.loss_from_scores(f, scores)
        g = prob.gradient_from_scores(f, scores)
        gn2 = numerics.norm_sq(g)
        rec = IterationRecord(
            iteration=i,
            loss=loss,
            grad_norm=float(np.sqrt(gn2)),
            filter=f.copy() if store_filters else None,
        )
        if gn2 == 0.0:
            rec.alpha = 0.0
            trace.append(rec)
            continue
        if method == "gd":
            alpha = np.asarray(gd_step_lengths, dtype=np.float64)
            f = f - alpha * g
            rec.alpha = float(alpha) if alpha.ndim == 0 else float(np.mean(alpha))
        else:
            alpha = _sd_alpha(prob, scores, g, gn2, fixed_step_beta)
            f = f - alpha * g
            rec.alpha = alpha
        trace.append(rec)
    trace.append(
        IterationRecord(
            iteration=n_iter,
            loss=prob.loss(f),
            filter=f.copy() if store_filters else None,
        )
    )
    return f, trace
