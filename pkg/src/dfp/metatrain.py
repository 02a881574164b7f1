"""Offline fitting of the loss parameters at desk scale.

Episodes pair a handful of training frames from the first half of a
sequence segment with test frames from the second half. The model is
predicted on the training side and judged on the test side with a hinged
regression error against Gaussian labels (sigma = a quarter of the base
target size), averaged over every optimizer iterate. The free parameters
(radial profiles and lambda, on a reduced knot grid) are fitted by
monotone coordinate descent on that objective; no gradients flow through
the optimizer."""

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from . import lossmodel as lm
from . import modelpred as mp
from . import numerics
from . import synth
from . import tracking as tr
from .fileio import DataError, read_annotations, read_dfm1, read_image
from .numerics import ShapeError, as_scoremap


@dataclass
class MetaObjective:
    loss_weight: float = 100.0  # enters L_tot when a box loss is added; kept for fidelity
    n_iter: int = 5
    hinge_threshold: float = 0.05
    label_sigma: float = 1.0  # score cells

    def __post_init__(self):
        if not self.loss_weight > 0:
            raise ValueError("loss_weight must be positive")
        if not 0 < self.hinge_threshold < 1:
            raise ValueError("hinge_threshold must lie in (0, 1)")
        if self.n_iter < 0:
            raise ValueError("n_iter must be nonnegative")


@dataclass
class Episode:
    """Model-prediction task: train on early frames, score on later ones.

    label_sigma, when set, carries this episode's quarter-of-target-size
    label width and overrides the objective default."""

    train_samples: list
    train_boxes: list
    test_samples: list
    segment_length: int
    label_sigma: float | None = None

    def __post_init__(self):
        if not self.train_samples or not self.test_samples:
            raise ValueError("episode needs both train and test frames")
        if len(self.train_boxes) != len(self.train_samples):
            raise ValueError("one target box per training sample required")


def test_error(s, z, threshold):
    """Hinged regression error: s - z where z > threshold, max(0, s) elsewhere."""
    s = as_scoremap(s)
    z = as_scoremap(z)
    if s.shape != z.shape:
        raise ShapeError(f"score shape {s.shape} != label shape {z.shape}")
    return np.where(z > threshold, s - z, np.maximum(0.0, s))


def gaussian_label(center, shape, sigma):
    cy, cx = float(center[0]), float(center[1])
    d2 = (np.arange(shape[0], dtype=np.float64)[:, None] - cy) ** 2 + (
        np.arange(shape[1], dtype=np.float64)[None, :] - cx
    ) ** 2
    return np.exp(-d2 / (2.0 * sigma**2))


def cls_loss(trace, test_samples, obj):
    """Mean over all optimizer iterates (initializer output included) of the
    summed squared test errors over the test samples."""
    filters = [rec.filter for rec in trace.records]
    if any(f is None for f in filters) or not filters:
        raise ValueError("trace must store every filter iterate")
    if not test_samples:
        raise ValueError("empty test set")
    total = 0.0
    for f in filters:
        for smp in test_samples:
            s = numerics.conv_valid(smp.features, f)
            z = gaussian_label(smp.center, s.shape, obj.label_sigma)
            err = test_error(s, z, obj.hinge_threshold)
            total += float(np.sum(err * err))
    return total / len(filters)


def episode_objective(episode, params, obj, filter_shape):
    if episode.label_sigma is not None:
        obj = dataclasses.replace(obj, label_sigma=episode.label_sigma)
    _, trace = mp.predict_model(
        episode.train_samples,
        params,
        obj.n_iter,
        target_boxes=episode.train_boxes,
        filter_shape=filter_shape,
        store_filters=True,
    )
    return cls_loss(trace, episode.test_samples, obj)


def mean_objective(episodes, params, obj, filter_shape):
    return float(
        np.mean([episode_objective(ep, params, obj, filter_shape) for ep in episodes])
    )


# ---------------------------------------------------------------------------
# episode construction


def sample_episode(seq, cfg, rng, extractor=None):
    """Draw train frames from the first half of a segment and test frames
    from the second half (n_frames each side)."""
    if extractor is None:
        extractor = tr.make_extractor_from_config(cfg)
    seg_len = min(cfg.segment_length, len(seq))
    if seg_len < 2 * cfg.episode_frames:
        raise ValueError(
            f"segment of {seg_len} frames cannot supply 2x{cfg.episode_frames} frames"
        )
    start = int(rng.integers(0, len(seq) - seg_len + 1))
    half = seg_len // 2
    first = start + np.sort(rng.choice(half, size=cfg.episode_frames, replace=False))
    second = start + half + np.sort(
        rng.choice(seg_len - half, size=cfg.episode_frames, replace=False)
    )
    k_off = (cfg.filter_size - 1) / 2.0

    def grab(idx):
        frame, gt = seq[idx]
        if gt is None:
            raise DataError(f"frame {idx} has no ground-truth box")
        smp, geom = tr.extract_patch_features(frame, gt, extractor, cfg)
        fw, fh = tr._feature_size(geom, gt, extractor)
        box = (smp.center[1] + k_off, smp.center[0] + k_off, fw, fh)
        cells = tr.target_size_cells(frame, gt, extractor, cfg)
        return smp, box, cells

    train = [grab(i) for i in first]
    test = [grab(i) for i in second]
    sizes = [c for _, _, c in train] + [c for _, _, c in test]
    return Episode(
        train_samples=[s for s, _, _ in train],
        train_boxes=[b for _, b, _ in train],
        test_samples=[s for s, _, _ in test],
        segment_length=seg_len,
        label_sigma=cfg.label_sigma_factor * float(np.mean(sizes)),
    )


def episodes_from_dir(path, cfg, rng):
    """Episode directories: ep_<k>/frame_<j>.{dfm1,pgm} + ep_<k>/gt.txt, or a
    synthetic.txt manifest of generated scenes (features=identity scenes are
    converted to feature-map frames with the configured image extractor)."""
    episodes = []
    manifest = os.path.join(path, "synthetic.txt")
    if os.path.exists(manifest):
        for _name, spec, frames, extras in synth.load_scene_manifest(manifest):
            seq = synth.generate_scene(spec, frames)
            extractor = None
            if extras.get("features") == "identity":
                gh = tr.make_extractor(
                    "gradhist",
                    stride=cfg.feature_stride,
                    gradient_gain=cfg.gradient_gain,
                    feature_rms=cfg.feature_rms,
                )
                seq = tr.to_feature_frames(seq, gh)
                extractor = tr.make_extractor("identity", stride=gh.stride)
            episodes.append(sample_episode(seq, cfg, rng, extractor=extractor))
    subdirs = sorted(
        d for d in os.listdir(path) if os.path.isdir(os.path.join(path, d))
    )
    for sub in subdirs:
        full = os.path.join(path, sub)
        names = sorted(
            n for n in os.listdir(full)
            if n.lower().endswith((".pgm", ".ppm", ".dfm1"))
        )
        if not names:
            continue
        boxes = read_annotations(os.path.join(full, "gt.txt"))
        seq = []
        for idx, name in enumerate(names):
            fp = os.path.join(full, name)
            img = read_dfm1(fp) if name.lower().endswith(".dfm1") else read_image(fp)
            gt = tr.TargetBox(*boxes[idx]) if idx in boxes else None
            seq.append((tr.Frame(img, frame_index=idx), gt))
        episodes.append(sample_episode(seq, cfg, rng))
    if not episodes:
        raise DataError(f"{path}: no episodes found")
    return episodes


# ---------------------------------------------------------------------------
# derivative-free fitting


def _params_to_vector(params):
    return np.concatenate(
        [
            params.label_fn.coefficients,
            params.weight_fn.coefficients,
            params.mask_fn.coefficients,
            [params.lam],
        ]
    )


def _vector_to_params(vec, n, delta):
    lam = max(0.0, float(vec[-1]))  # lambda stays nonnegative by projection
    return lm.LossParams(
        label_fn=lm.RadialFunction(vec[:n], delta, "identity"),
        weight_fn=lm.RadialFunction(vec[n : 2 * n], delta, "identity"),
        mask_fn=lm.RadialFunction(vec[2 * n : 3 * n], delta, "sigmoid"),
        lam=lam,
    )


def reduce_params(params, n_knots):
    """Resample a parameter set onto a coarser knot grid covering the same
    radial support (the fitting space)."""
    if n_knots < 2:
        raise ValueError("need at least 2 knots")
    support = (params.n - 1) * params.knot_spacing
    delta = support / (n_knots - 1)
    d = np.arange(n_knots) * delta
    phi_y = lm.rbf_eval(params.label_fn, d)
    phi_v = lm.rbf_eval(params.weight_fn, d)
    mask_vals = np.clip(lm.rbf_eval(params.mask_fn, d), 1e-12, 1.0 - 1e-12)
    phi_m = np.log(mask_vals) - np.log1p(-mask_vals)
    return lm.LossParams(
        label_fn=lm.RadialFunction(phi_y, delta, "identity"),
        weight_fn=lm.RadialFunction(phi_v, delta, "identity"),
        mask_fn=lm.RadialFunction(phi_m, delta, "sigmoid"),
        lam=params.lam,
    )


def fit_loss_params(episodes, init, obj, budget, filter_shape, seed=0,
                    perturbation=0.2, step=2.0, callback=None):
    """Monotone adaptive coordinate descent on the mean episode objective.

    Sweeps the parameter vector in a seeded random order; each coordinate is
    probed one finite step up or down and moved only if the objective
    improves, with the winning direction extended while it keeps paying off.
    Per-coordinate steps grow on success and shrink on failure, so the
    returned parameters are never worse than init and the evaluation budget
    is an upper bound on objective calls (the init evaluation is free).
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("need at least one episode")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = np.random.default_rng(seed)
    n, delta = init.n, init.knot_spacing

    theta = _params_to_vector(init)
    steps = np.full(theta.shape, perturbation)
    steps[-1] = perturbation * max(init.lam, 0.05)  # lambda moves on its own scale

    # keep fitted profiles in ranges the online tracker can consume
    lo = np.concatenate([np.full(n, -0.25), np.full(n, 0.05), np.full(n, -40.0), [0.0]])
    hi = np.concatenate([np.full(n, 2.5), np.full(n, 5.0), np.full(n, 40.0), [2.0]])

    # moves are smooth bumps over neighboring knots within each profile
    # block; single-knot spikes overfit the episodes and destabilize the
    # online tracker that later consumes the fitted profiles
    moves = np.zeros((theta.size, theta.size))
    knot_idx = np.arange(n, dtype=np.float64)
    for block in range(3):
        for j in range(n):
            bump = np.exp(-((knot_idx - j) ** 2) / (2.0 * 1.2**2))
            bump /= bump.max()
            moves[block * n + j, block * n : (block + 1) * n] = bump
    moves[-1, -1] = 1.0

    def objective(vec):
        return mean_objective(episodes, _vector_to_params(vec, n, delta), obj, filter_shape)

    best_val = objective(theta)
    init_val = best_val
    evals = 0
    max_extensions = 3
    while evals < budget:
        order = rng.permutation(theta.size)
        moved = False
        for idx in order:
            if evals >= budget:
                break
            direction = 0.0
            for sign in (1.0, -1.0):
                if evals >= budget:
                    break
                cand = np.clip(theta + sign * steps[idx] * moves[idx], lo, hi)
                val = objective(cand)
                evals += 1
                if val < best_val:
                    theta, best_val, direction = cand, val, sign
                    break
            if direction == 0.0:
                steps[idx] *= 0.5
                continue
            moved = True
            for _ in range(max_extensions):
                if evals >= budget:
                    break
                steps[idx] *= float(step)
                cand = np.clip(theta + direction * steps[idx] * moves[idx], lo, hi)
                val = objective(cand)
                evals += 1
                if val < best_val:
                    theta, best_val = cand, val
                else:
                    steps[idx] /= float(step)
                    break
        if not moved and np.max(steps) < 1e-6:
            break
    if callback is not None:
        callback(init_val, best_val, evals)
    return _vector_to_params(theta, n, delta)
