"""Benchmark harness: success-plot AUC over synthetic or on-disk sequence
suites, the model-prediction ablation modes, and the steepest-descent vs
fixed-step convergence study."""

import dataclasses
import json
import os

import numpy as np

from . import lossmodel as lm
from . import modelpred as mp
from . import synth
from . import tracking as tr
from .fileio import DataError, read_annotations, read_dfm1, read_image

# mode -> (optimizer, update strategy)
MODES = {
    "sd": ("sd", "ours"),
    "gd": ("gd", "ours"),
    "init": ("init", "ours"),
    "no-update": ("sd", "no_update"),
    "model-avg": ("sd", "model_averaging"),
}

SCHEMA_VERSION = "dfp-bench-1"


def iou(a, b):
    """Intersection over union of two (cx, cy, w, h) boxes."""
    ax0, ay0 = a.cx - a.w / 2.0, a.cy - a.h / 2.0
    ax1, ay1 = a.cx + a.w / 2.0, a.cy + a.h / 2.0
    bx0, by0 = b.cx - b.w / 2.0, b.cy - b.h / 2.0
    bx1, by1 = b.cx + b.w / 2.0, b.cy + b.h / 2.0
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def success_auc(ious):
    """Mean fraction of frames above each of 101 IoU thresholds in [0, 1],
    in percent (the success-plot AUC convention)."""
    if not len(ious):
        return 0.0
    arr = np.asarray(ious, dtype=np.float64)
    thresholds = np.linspace(0.0, 1.0, 101)
    return float(100.0 * np.mean([np.mean(arr > t) for t in thresholds]))


def run_sequence(seq, cfg, mode, loss_params=None):
    """Track one sequence of (Frame, TargetBox) pairs in the given mode.

    Ground truth is used only for the first-frame box and for scoring; the
    first frame is excluded from the overlap statistics.
    """
    optimizer, update = MODES[mode]
    run_cfg = dataclasses.replace(cfg, optimizer=optimizer, update_mode=update)
    state = tr.initialize(seq[0][0], seq[0][1], run_cfg, loss_params=loss_params)
    ious = []
    for frame, gt in seq[1:]:
        box, _, _ = tr.track_frame(state, frame)
        if gt is not None:
            ious.append(iou(box, gt))
    return {
        "auc": success_auc(ious),
        "mean_iou": float(np.mean(ious)) if ious else 0.0,
        "frames": len(seq),
    }


def load_sequence_dir(path):
    """Load frames (PGM/PPM/DFM1, sorted by filename) and gt.txt boxes."""
    names = sorted(
        n for n in os.listdir(path)
        if n.lower().endswith((".pgm", ".ppm", ".dfm1"))
    )
    if not names:
        raise DataError(f"{path}: no frame files")
    gt_path = os.path.join(path, "gt.txt")
    if not os.path.exists(gt_path):
        raise DataError(f"{path}: missing gt.txt")
    boxes = read_annotations(gt_path)
    seq = []
    for idx, name in enumerate(names):
        full = os.path.join(path, name)
        if name.lower().endswith(".dfm1"):
            img = read_dfm1(full)
        else:
            img = read_image(full)
        gt = tr.TargetBox(*boxes[idx]) if idx in boxes else None
        seq.append((tr.Frame(img, frame_index=idx), gt))
    if seq[0][1] is None:
        raise DataError(f"{path}: gt.txt has no entry for frame 0")
    return seq


def load_suite(path, cfg=None):
    """A suite is a directory of sequence subdirectories and/or a
    synthetic.txt manifest of generated scenes. Returns a sorted list of
    (name, provider) pairs where provider() yields the sequence. Scenes
    marked features=identity are converted to feature-map frames with the
    configured image extractor."""
    entries = []
    manifest = os.path.join(path, "synthetic.txt")
    if os.path.exists(manifest):
        for name, spec, frames, extras in synth.load_scene_manifest(manifest):
            if extras.get("features") == "identity":
                if cfg is None:
                    raise DataError(f"{path}: feature scenes need a config")
                gh = tr.make_extractor(
                    "gradhist",
                    stride=cfg.feature_stride,
                    gradient_gain=cfg.gradient_gain,
                    feature_rms=cfg.feature_rms,
                )

                def provider(spec=spec, frames=frames, gh=gh):
                    return tr.to_feature_frames(synth.generate_scene(spec, frames), gh)

            else:

                def provider(spec=spec, frames=frames):
                    return synth.generate_scene(spec, frames)

            entries.append((name, provider))
    for sub in sorted(os.listdir(path)):
        full = os.path.join(path, sub)
        if os.path.isdir(full):
            entries.append((sub, lambda full=full: load_sequence_dir(full)))
    if not entries:
        raise DataError(f"{path}: neither synthetic.txt nor sequence directories found")
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate sequence names")
    return sorted(entries, key=lambda e: e[0])


def run_benchmark(suite, cfg, modes, loss_params=None):
    """One record per (mode, sequence); deterministic ordering."""
    records = []
    for name, provider in suite:
        seq = provider()
        for mode in modes:
            result = run_sequence(seq, cfg, mode, loss_params=loss_params)
            records.append({"mode": mode, "sequence": name, **result})
    records.sort(key=lambda r: (r["mode"], r["sequence"]))
    summary = {}
    for mode in modes:
        vals = [r["auc"] for r in records if r["mode"] == mode]
        summary[mode] = float(np.mean(vals)) if vals else 0.0
    return {"schema_version": SCHEMA_VERSION, "records": records, "summary": summary}


def benchmark_json(report):
    return json.dumps(report, sort_keys=True, separators=(", ", ": "), indent=1)


# ---------------------------------------------------------------------------
# optimizer convergence study (steepest descent vs best fixed-step descent)


def scene_sample_set(spec, cfg, n_samples=6, frame_step=3):
    """Training samples from ground-truth boxes of a generated scene."""
    seq = synth.generate_scene(spec, 1 + frame_step * (n_samples - 1))
    extractor = tr.make_extractor_from_config(cfg)
    samples, boxes = [], []
    for i in range(n_samples):
        frame, gt = seq[i * frame_step]
        smp, geom = tr.extract_patch_features(frame, gt, extractor, cfg)
        samples.append(smp)
        k_off = (cfg.filter_size - 1) / 2.0
        fw, fh = tr._feature_size(geom, gt, extractor)
        boxes.append((smp.center[1] + k_off, smp.center[0] + k_off, fw, fh))
    params = tr.default_loss_params(
        cfg, tr.target_size_cells(seq[0][0], seq[0][1], extractor, cfg)
    )
    return samples, boxes, params


def iterations_to_loss(losses, threshold):
    for i, value in enumerate(losses):
        if value <= threshold:
            return i
    return None


def convergence_study(specs, cfg, sd_iters=100, gd_iters=400, grid_points=10):
    """Per scene: iterations for SD and for the best fixed-step GD from a
    log-spaced step grid to come within 10% of the converged loss."""
    results = []
    for spec in specs:
        samples, boxes, params = scene_sample_set(spec, cfg)
        k = cfg.filter_size
        c = samples[0].features.shape[2]
        _, trace = mp.predict_model(
            samples, params, sd_iters, target_boxes=boxes, filter_shape=(k, k, c)
        )
        sd_losses = trace.losses
        converged = min(sd_losses)
        threshold = converged * 1.1
        sd_need = iterations_to_loss(sd_losses, threshold)
        alpha0 = next(a for a in trace.alphas if a)
        best_gd = None
        for step in alpha0 * np.logspace(-1.0, 1.0, grid_points):
            _, gtrace = mp.predict_model(
                samples,
                params,
                gd_iters,
                target_boxes=boxes,
                filter_shape=(k, k, c),
                method="gd",
                gd_step_lengths=float(step),
            )
            need = iterations_to_loss(gtrace.losses, threshold)
            if need is not None and (best_gd is None or need < best_gd):
                best_gd = need
        results.append(
            {
                "seed": spec.seed,
                "sd_iterations": sd_need,
                "gd_iterations": best_gd if best_gd is not None else gd_iters,
                "converged_loss": converged,
            }
        )
    return results
