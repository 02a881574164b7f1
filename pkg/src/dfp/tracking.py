"""Online tracking loop: first-frame augmentation and model prediction,
per-frame localization over a scale set, confidence-gated sample memory,
and scheduled model refinement with selectable update strategies."""

import math
from dataclasses import dataclass

import numpy as np

from . import lossmodel as lm
from . import modelpred as mp
from . import numerics
from .features import (
    GradientHistogramExtractor,
    IdentityExtractor,
    PatchGeometry,
    make_extractor,
)
from .interp import bilinear_sample, gaussian_blur

UPDATE_MODES = ("ours", "no_update", "model_averaging")


@dataclass
class Frame:
    """One input frame: a grayscale image in [0,1] or a precomputed
    (H, W, C) feature map."""

    image: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim not in (2, 3):
            raise ValueError(f"frame must be 2-D image or 3-D features, got {self.image.shape}")
        if min(self.image.shape[:2]) < 1:
            raise ValueError("empty frame")

    @property
    def is_feature_map(self):
        return self.image.ndim == 3


@dataclass
class TargetBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        self.cx, self.cy = float(self.cx), float(self.cy)
        self.w, self.h = float(self.w), float(self.h)
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got {self.w}x{self.h}")

    @property
    def size(self):
        return math.sqrt(self.w * self.h)

    def as_tuple(self):
        return (self.cx, self.cy, self.w, self.h)


class IdentityGeometry:
    """Score <-> frame mapping when the frame already is the feature map;
    frame 'pixels' are the virtual stride-sized pixels of that grid."""

    def __init__(self, stride, filter_k):
        self.stride = int(stride)
        self.filter_k = int(filter_k)

    def frame_to_score(self, x, y):
        s = self.stride
        off = (s - 1) / 2.0
        k_off = (self.filter_k - 1) / 2.0
        return (x - off) / s - k_off, (y - off) / s - k_off

    def score_to_frame(self, sx, sy):
        s = self.stride
        off = (s - 1) / 2.0
        k_off = (self.filter_k - 1) / 2.0
        return (sx + k_off) * s + off, (sy + k_off) * s + off


def _frame_bounds(frame, extractor):
    if frame.is_feature_map:
        h, w = frame.image.shape[:2]
        s = extractor.stride
        return h * s, w * s
    return frame.image.shape[0], frame.image.shape[1]


def _check_target_visible(frame, box, extractor):
    h, w = _frame_bounds(frame, extractor)
    if (
        box.cx + box.w / 2.0 <= 0
        or box.cy + box.h / 2.0 <= 0
        or box.cx - box.w / 2.0 >= w
        or box.cy - box.h / 2.0 >= h
    ):
        raise ValueError(f"target box {box.as_tuple()} lies outside the {w}x{h} frame")


def _geometry(frame, box, extractor, cfg, scale=1.0):
    if frame.is_feature_map:
        return IdentityGeometry(extractor.stride, cfg.filter_size)
    side = cfg.search_area_scale * box.size * scale
    return PatchGeometry(
        (box.cx, box.cy), side, cfg.patch_size, extractor.stride, cfg.filter_size
    )


def _warped_crop(frame, geom, rotation=0.0, scale=1.0, flip=False, shift=(0.0, 0.0)):
    """Resample the crop with an optional augmentation transform folded in.

    shift is (dy, dx) in patch pixels: the content appears displaced by that
    amount in the output. Image frames sample straight from the frame so
    shifts expose real content; feature frames warp the map itself.
    """
    if frame.is_feature_map:
        src = frame.image
        n_r, n_c = src.shape[:2]
        mid_r, mid_c = (n_r - 1) / 2.0, (n_c - 1) / 2.0
        rows = np.arange(n_r, dtype=np.float64)[:, None] - shift[0] / geom.stride
        cols = np.arange(n_c, dtype=np.float64)[None, :] - shift[1] / geom.stride
    else:
        n_r = n_c = geom.patch_size
        mid_r = mid_c = (geom.patch_size - 1) / 2.0
        rows = np.arange(n_r, dtype=np.float64)[:, None] - shift[0]
        cols = np.arange(n_c, dtype=np.float64)[None, :] - shift[1]
    rows = np.broadcast_to(rows, (n_r, n_c))
    cols = np.broadcast_to(cols, (n_r, n_c))
    if rotation != 0.0 or scale != 1.0 or flip:
        theta = math.radians(rotation)
        c, s = math.cos(theta), math.sin(theta)
        rr, cc = rows - mid_r, cols - mid_c
        rows = (c * rr - s * cc) / scale + mid_r
        cols = (s * rr + c * cc) / scale + mid_c
        if flip:
            cols = (n_c - 1) - cols
    if frame.is_feature_map:
        return bilinear_sample(src, rows, cols)
    xs, ys = geom.patch_to_frame(cols, rows)
    return bilinear_sample(frame.image, ys, xs)


def extract_patch_features(frame, box, extractor, cfg, scale=1.0):
    """Crop a square region of side search_area_scale * sqrt(w*h) around the
    box (edge-clamped), resample, extract features, and record the target
    center in score-map coordinates."""
    _check_target_visible(frame, box, extractor)
    geom = _geometry(frame, box, extractor, cfg, scale)
    if frame.is_feature_map:
        feats = extractor.extract(frame.image)
        sx, sy = geom.frame_to_score(box.cx, box.cy)
    else:
        feats = extractor.extract(_warped_crop(frame, geom))
        sx, sy = geom.frame_to_score(box.cx, box.cy)
    return lm.TrainingSample(feats, (sy, sx)), geom


def _cells_per_pixel(geom, extractor):
    if isinstance(geom, IdentityGeometry):
        return 1.0 / extractor.stride
    return 1.0 / (geom.pixels_per_patch_px * extractor.stride)


def _feature_size(geom, box, extractor, jitter=1.0):
    """Target extent in feature cells for ROI pooling."""
    r = _cells_per_pixel(geom, extractor)
    return box.w * jitter * r, box.h * jitter * r


def _augmentation_plan(cfg, shift_px):
    """The fixed 15-sample first-frame augmentation list."""
    shift = cfg.aug_shift_fraction * shift_px
    plan = [{}]
    plan += [
        {"shift": (0.0, shift)},
        {"shift": (0.0, -shift)},
        {"shift": (shift, 0.0)},
        {"shift": (-shift, 0.0)},
    ]
    plan.append({"flip": True})
    plan += [{"rotation": r} for r in cfg.aug_rotations]
    plan += [{"blur": b} for b in cfg.aug_blur_sigmas]
    plan += [{"scale": s} for s in cfg.aug_scale_jitters]
    plan += [{"brightness": b} for b in cfg.aug_brightness]
    return plan


class TrackerState:
    """Mutable single-owner state for one tracked sequence."""

    def __init__(self, cfg, extractor, loss_params, filter_, box, memory, memory_boxes,
                 initial_samples, initial_boxes, init_trace):
        self.cfg = cfg
        self.extractor = extractor
        self.loss_params = loss_params
        self.filter = filter_
        self.box = box
        self.memory = memory
        self.memory_boxes = list(memory_boxes)
        self.initial_samples = list(initial_samples)
        self.initial_boxes = list(initial_boxes)
        self.first_filter = filter_.copy()
        self.init_trace = init_trace
        self.frames_since_update = 0
        self.frame_count = 0
        self.update_mode = cfg.update_mode
        self.optimizer_mode = cfg.optimizer
        self.scale_set = tuple(cfg.scale_factors)
        self.last_score = None


def set_update_mode(state, mode):
    mode = {"no-update": "no_update", "avg": "model_averaging"}.get(mode, mode)
    if mode not in UPDATE_MODES:
        raise ValueError(f"unknown update mode {mode!r}")
    state.update_mode = mode
    return state


def default_loss_params(cfg, base_size_cells):
    sigma = cfg.label_sigma_factor * base_size_cells
    return lm.init_loss_params(
        cfg.rbf_knots,
        cfg.rbf_spacing,
        sigma=sigma,
        lam=cfg.lambda_init,
        mask_center=cfg.mask_center,
        mask_width=cfg.mask_width,
    )


def target_size_cells(frame, box, extractor, cfg):
    if frame.is_feature_map:
        return box.size / extractor.stride
    side = cfg.search_area_scale * box.size
    return box.size * (cfg.patch_size / side) / extractor.stride


def to_feature_frames(seq, extractor):
    """Precompute features for every frame of a sequence (deep-feature-style
    ingestion: downstream consumers see feature maps, not images)."""
    out = []
    for frame, gt in seq:
        if frame.is_feature_map:
            out.append((frame, gt))
        else:
            out.append((Frame(extractor.extract(frame.image), frame.frame_index), gt))
    return out


def make_extractor_from_config(cfg):
    if cfg.extractor == "gradhist":
        return make_extractor("gradhist", stride=cfg.feature_stride,
                              gradient_gain=cfg.gradient_gain,
                              feature_rms=cfg.feature_rms)
    return make_extractor("identity", stride=cfg.identity_stride)


def initialize(first_frame, box, cfg, loss_params=None, extractor=None):
    """Build the 15-sample augmented training set, predict the initial model
    (pooling init + init_recursions steepest-descent steps), and fill memory."""
    if extractor is None:
        extractor = make_extractor_from_config(cfg)
    if not isinstance(box, TargetBox):
        box = TargetBox(*box)
    _check_target_visible(first_frame, box, extractor)
    if loss_params is None:
        loss_params = default_loss_params(
            cfg, target_size_cells(first_frame, box, extractor, cfg)
        )

    geom = _geometry(first_frame, box, extractor, cfg)
    base_sx, base_sy = geom.frame_to_score(box.cx, box.cy)
    # patch px per score cell: shifts in patch pixels land at shift/stride cells
    cell_px = extractor.stride
    if first_frame.is_feature_map:
        shift_px = first_frame.image.shape[0] * extractor.stride
    else:
        shift_px = cfg.patch_size

    k_off = (cfg.filter_size - 1) / 2.0
    samples, boxes = [], []
    for i, aug in enumerate(_augmentation_plan(cfg, shift_px)):
        shift = aug.get("shift", (0.0, 0.0))
        patch = _warped_crop(
            first_frame,
            geom,
            rotation=aug.get("rotation", 0.0),
            scale=aug.get("scale", 1.0),
            flip=aug.get("flip", False),
            shift=shift,
        )
        if "blur" in aug:
            patch = gaussian_blur(patch, aug["blur"])
        if "brightness" in aug:
            patch = patch + aug["brightness"]
            if not first_frame.is_feature_map:
                patch = np.clip(patch, 0.0, 1.0)
        feats = extractor.extract(patch)
        cy = base_sy + shift[0] / cell_px
        cx = base_sx + shift[1] / cell_px
        weight = 1.0 if i == 0 else cfg.aug_sample_weight
        samples.append(lm.TrainingSample(feats, (cy, cx), weight))
        fw, fh = _feature_size(geom, box, extractor, jitter=aug.get("scale", 1.0))
        boxes.append((cx + k_off, cy + k_off, fw, fh))

    k = cfg.filter_size
    c = samples[0].features.shape[2]
    # the 'init' ablation removes the optimizer entirely; 'gd' swaps the
    # step rule but keeps the recursion budget
    n_rec = 0 if cfg.optimizer == "init" else cfg.init_recursions
    filt, trace = mp.predict_model(
        samples,
        loss_params,
        n_rec,
        target_boxes=boxes,
        filter_shape=(k, k, c),
        method="gd" if cfg.optimizer == "gd" else "sd",
        gd_step_lengths=cfg.gd_step_length if cfg.optimizer == "gd" else None,
    )

    memory = lm.SampleSet(cfg.memory_capacity)
    memory_boxes = []
    for smp, fb in zip(samples, boxes):
        memory.add(smp)
        memory_boxes.append(fb)

    return TrackerState(
        cfg=cfg,
        extractor=extractor,
        loss_params=loss_params,
        filter_=filt,
        box=box,
        memory=memory,
        memory_boxes=memory_boxes,
        initial_samples=samples,
        initial_boxes=boxes,
        init_trace=trace,
    )


def _subcell_peak(score):
    """Argmax plus a quadratic 3x3 refinement, clamped into the map."""
    idx = int(np.argmax(score))
    py, px = divmod(idx, score.shape[1])
    peak = float(score[py, px])
    if 0 < py < score.shape[0] - 1 and 0 < px < score.shape[1] - 1:
        win = score[py - 1 : py + 2, px - 1 : px + 2]
        yy, xx = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], indexing="ij")
        a = np.stack(
            [np.ones(9), xx.ravel(), yy.ravel(), xx.ravel() ** 2, yy.ravel() ** 2,
             (xx * yy).ravel()],
            axis=1,
        )
        coef, *_ = np.linalg.lstsq(a, win.ravel(), rcond=None)
        c0, c1, c2, c3, c4, c5 = coef
        hess = np.array([[2 * c3, c5], [c5, 2 * c4]])
        det = np.linalg.det(hess)
        if det > 0 and hess[0, 0] < 0:
            dx, dy = np.linalg.solve(hess, [-c1, -c2])
            if abs(dx) <= 1.0 and abs(dy) <= 1.0:
                return py + float(dy), px + float(dx), peak
    return float(py), float(px), peak


def _has_distractor_peak(score, cfg):
    """A secondary local maximum at >= ratio * global max, more than
    min_distance cells away from the global peak."""
    gmax = float(score.max())
    if gmax <= 0:
        return False
    idx = int(np.argmax(score))
    gy, gx = divmod(idx, score.shape[1])
    pad = np.pad(score, 1, mode="constant", constant_values=-np.inf)
    center = pad[1:-1, 1:-1]
    is_max = np.ones_like(score, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_max &= center >= pad[1 + dy : pad.shape[0] - 1 + dy,
                                    1 + dx : pad.shape[1] - 1 + dx]
    ys, xs = np.nonzero(is_max & (score >= cfg.distractor_ratio * gmax))
    dist = np.hypot(ys - gy, xs - gx)
    return bool(np.any(dist > cfg.distractor_min_distance))


def _refine_filter(state, n_recursions):
    cfg = state.cfg
    if state.optimizer_mode == "init":
        state.filter = mp.init_filter(
            state.memory, state.filter.shape, state.memory_boxes
        )
        return
    prob = lm.PreparedProblem(state.memory, state.loss_params, state.filter.shape)
    f = state.filter
    for _ in range(n_recursions):
        if state.optimizer_mode == "gd":
            f = mp.gradient_descent_step(
                f, state.memory, state.loss_params, cfg.gd_step_length, prepared=prob
            )
        else:
            f, _, _ = mp.steepest_descent_step(
                f, state.memory, state.loss_params, prepared=prob
            )
    state.filter = f


def _model_average_update(state, n_recursions):
    cfg = state.cfg
    f_new, _ = mp.predict_model(
        state.initial_samples,
        state.loss_params,
        n_recursions,
        f0=state.filter,
    )
    gamma = cfg.model_avg_gamma
    state.filter = (1.0 - gamma) * state.filter + gamma * f_new


def track_frame(state, frame):
    """Localize in one frame and update the model per the schedule.

    Returns (box, confidence, info); info carries the 'updated' flag, the
    recursion count, distractor flag and memory size for instrumentation.
    """
    cfg = state.cfg
    extractor = state.extractor
    prev = state.box

    # precomputed features cannot be rescaled: single-scale search
    scales = (1.0,) if frame.is_feature_map else state.scale_set
    best = None
    for scale in scales:
        geom = _geometry(frame, prev, extractor, cfg, scale)
        if frame.is_feature_map:
            feats = extractor.extract(frame.image)
        else:
            feats = extractor.extract(_warped_crop(frame, geom))
        score = numerics.conv_valid(feats, state.filter)
        sy, sx, peak = _subcell_peak(score)
        if best is None or peak > best["peak"]:
            best = {
                "peak": peak,
                "scale": scale,
                "geom": geom,
                "feats": feats,
                "score": score,
                "sy": sy,
                "sx": sx,
            }

    confidence = best["peak"]
    # memory gate scales with the label peak so learned label amplitudes
    # keep the default threshold meaningful
    gate = cfg.tau_mem * max(float(lm.rbf_eval(state.loss_params.label_fn, 0.0)), 1e-6)
    x, y = best["geom"].score_to_frame(best["sx"], best["sy"])
    applied = best["scale"] ** (1.0 / cfg.scale_damping)
    fh, fw = _frame_bounds(frame, extractor)
    new_box = TargetBox(
        min(max(x, 0.0), fw - 1.0),
        min(max(y, 0.0), fh - 1.0),
        prev.w * applied,
        prev.h * applied,
    )
    state.box = new_box
    state.frame_count += 1

    stored = False
    if confidence > gate:
        sample = lm.TrainingSample(best["feats"], (best["sy"], best["sx"]), 1.0)
        if len(state.memory) >= state.memory.capacity:
            state.memory_boxes.pop(0)
        state.memory.add(sample)
        k_off = (cfg.filter_size - 1) / 2.0
        fw_c, fh_c = _feature_size(best["geom"], new_box, extractor)
        state.memory_boxes.append(
            (best["sx"] + k_off, best["sy"] + k_off, fw_c, fh_c)
        )
        stored = True

    distractor = _has_distractor_peak(best["score"], cfg)
    state.frames_since_update += 1
    updated = False
    recursions = 0
    if state.frames_since_update >= cfg.refine_interval:
        recursions = cfg.refine_recursions
        state.frames_since_update = 0
    elif distractor:
        recursions = cfg.distractor_recursions

    if recursions > 0:
        if state.update_mode == "ours":
            _refine_filter(state, recursions)
            updated = True
        elif state.update_mode == "model_averaging":
            _model_average_update(state, recursions)
            updated = True
        # no_update: keep the first-frame filter

    state.last_score = best["score"]
    info = {
        "updated": updated,
        "recursions": recursions if updated else 0,
        "distractor": distractor,
        "memory_size": len(state.memory),
        "stored": stored,
        "scale": best["scale"],
        "frame_index": frame.frame_index,
    }
    return new_box, confidence, info
