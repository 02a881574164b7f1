"""Command-line front end: track, gradcheck, bench, meta-train, export-scores.

Exit codes: 0 success, 1 validation failure, 2 I/O failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import bench as benchmod
from . import lossmodel as lm
from . import metatrain as mt
from . import numerics
from . import tracking as tr
from .bench import SCHEMA_VERSION
from .config import ConfigError, load_config
from .fileio import DataError, write_pgm

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _add_common(parser):
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a single config key (repeatable)",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dfp",
        description="discriminative filter prediction tracker and its model machinery",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"dfp {__version__} (bench schema {SCHEMA_VERSION}, feature format DFM1)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="track one sequence, one JSON line per frame")
    p.add_argument("--seq", required=True, help="sequence directory (frames + gt.txt)")
    p.add_argument("--mode", default="ours", choices=["ours", "no-update", "avg"])
    p.add_argument("--dump-scores", metavar="DIR", help="write per-frame score maps as PGM")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the closed-form gradient")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("bench", help="run tracker ablations over a suite directory")
    p.add_argument("--suite", required=True)
    p.add_argument(
        "--modes",
        default="sd,gd,init,no-update,model-avg",
        help="comma-separated subset of sd,gd,init,no-update,model-avg",
    )
    p.add_argument("--params", help="loss-parameter file to track with")
    _add_common(p)

    p = sub.add_parser("meta-train", help="fit loss parameters on an episode set")
    p.add_argument("--episodes", required=True, help="episode directory or scene manifest dir")
    p.add_argument("--out", required=True, help="output parameter file")
    _add_common(p)

    p = sub.add_parser("export-scores", help="track a sequence and dump score maps")
    p.add_argument("--seq", required=True)
    p.add_argument("--out", required=True, help="output directory for PGM score maps")
    p.add_argument("--mode", default="ours", choices=["ours", "no-update", "avg"])
    _add_common(p)

    return parser


def _load_cfg(args):
    return load_config(getattr(args, "config", None), getattr(args, "overrides", []))


def _dump_score(path, score):
    lo, hi = float(score.min()), float(score.max())
    span = hi - lo if hi > lo else 1.0
    write_pgm(path, (score - lo) / span)


def _run_track(args, cfg, out=sys.stdout, dump_dir=None):
    seq = benchmod.load_sequence_dir(args.seq)
    state = tr.initialize(seq[0][0], seq[0][1], cfg)
    tr.set_update_mode(state, args.mode)
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)

    def emit(frame_index, box, confidence, updated):
        rec = {
            "frame_index": frame_index,
            "cx": box.cx,
            "cy": box.cy,
            "w": box.w,
            "h": box.h,
            "confidence": confidence,
            "updated": updated,
        }
        out.write(json.dumps(rec, sort_keys=True) + "\n")

    first_sample, _ = tr.extract_patch_features(
        seq[0][0], seq[0][1], state.extractor, cfg
    )
    s0 = numerics.conv_valid(first_sample.features, state.filter)
    if dump_dir is not None:
        _dump_score(os.path.join(dump_dir, "score_000000.pgm"), s0)
    emit(0, seq[0][1], float(s0.max()), True)
    for i, (frame, _gt) in enumerate(seq[1:], start=1):
        box, conf, info = tr.track_frame(state, frame)
        if dump_dir is not None:
            _dump_score(os.path.join(dump_dir, f"score_{i:06d}.pgm"), state.last_score)
        emit(frame.frame_index, box, conf, info["updated"])
    return EXIT_OK


def _gradcheck(trials, seed, out=sys.stdout):
    """Max relative error of the closed-form gradient against central
    finite differences over seeded random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        params = lm.LossParams(
            label_fn=lm.RadialFunction(rng.standard_normal(10), 0.5),
            weight_fn=lm.RadialFunction(1.0 + 0.3 * rng.standard_normal(10), 0.5),
            mask_fn=lm.RadialFunction(2.0 * rng.standard_normal(10), 0.5, "sigmoid"),
            lam=float(rng.uniform(0.05, 0.5)),
        )
        while True:
            f = rng.standard_normal((4, 4, 2)) * 0.5
            samples = [
                lm.TrainingSample(
                    rng.standard_normal((8, 8, 2)),
                    (rng.uniform(0, 4), rng.uniform(0, 4)),
                    1.0 if i == 0 else float(rng.uniform(0.3, 2.0)),
                )
                for i in range(3)
            ]
            if all(
                np.min(np.abs(numerics.conv_valid(s.features, f))) > 1e-3
                for s in samples
            ):
                break
        g = lm.gradient(f, samples, params)
        fd = np.zeros_like(f)
        eps = 1e-6
        for idx in np.ndindex(f.shape):
            fp = f.copy()
            fp[idx] += eps
            fm = f.copy()
            fm[idx] -= eps
            fd[idx] = (lm.loss(fp, samples, params) - lm.loss(fm, samples, params)) / (
                2 * eps
            )
        rel = np.abs(g - fd) / np.maximum.reduce(
            [np.abs(g), np.abs(fd), np.full(g.shape, 1e-8)]
        )
        worst = max(worst, float(rel.max()))
    out.write(f"gradcheck: {trials} trials, max relative error {worst:.3e}\n")
    return EXIT_OK if worst < 1e-5 else EXIT_VALIDATION


def _run_bench(args, cfg, out=sys.stdout):
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    unknown = [m for m in modes if m not in benchmod.MODES]
    if unknown:
        raise ConfigError(f"unknown bench modes: {', '.join(unknown)}")
    loss_params = None
    if getattr(args, "params", None):
        loss_params = lm.load_loss_params(args.params)
    suite = benchmod.load_suite(args.suite, cfg)
    report = benchmod.run_benchmark(suite, cfg, modes, loss_params=loss_params)
    out.write(benchmod.benchmark_json(report) + "\n")
    return EXIT_OK


def _run_meta_train(args, cfg, out=sys.stdout):
    rng = np.random.default_rng(cfg.seed)
    episodes = mt.episodes_from_dir(args.episodes, cfg, rng)
    ref = episodes[0].train_samples[0]
    sigma = cfg.label_sigma_factor * (cfg.patch_size / cfg.search_area_scale) / cfg.feature_stride
    obj = mt.MetaObjective(
        loss_weight=cfg.cls_loss_weight,
        n_iter=cfg.predict_recursions,
        hinge_threshold=cfg.hinge_threshold,
        label_sigma=sigma,
    )
    full = lm.init_loss_params(
        cfg.rbf_knots,
        cfg.rbf_spacing,
        sigma=sigma,
        lam=cfg.lambda_init,
        mask_center=cfg.mask_center,
        mask_width=cfg.mask_width,
    )
    init = mt.reduce_params(full, cfg.meta_knots)
    shape = (cfg.filter_size, cfg.filter_size, ref.features.shape[2])

    def report(init_val, final_val, evals):
        drop = 100.0 * (1.0 - final_val / init_val) if init_val > 0 else 0.0
        out.write(
            f"meta-train: objective {init_val:.6g} -> {final_val:.6g} "
            f"({drop:.1f}% lower) in {evals} evaluations\n"
        )

    fitted = mt.fit_loss_params(
        episodes,
        init,
        obj,
        cfg.meta_budget,
        shape,
        seed=cfg.seed,
        perturbation=cfg.meta_perturbation,
        step=cfg.meta_step,
        callback=report,
    )
    lm.save_loss_params(fitted, args.out)
    out.write(f"meta-train: wrote {args.out}\n")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_cfg(args)
        if args.command == "track":
            return _run_track(args, cfg, dump_dir=args.dump_scores)
        if args.command == "gradcheck":
            return _gradcheck(args.trials, args.seed)
        if args.command == "bench":
            return _run_bench(args, cfg)
        if args.command == "meta-train":
            return _run_meta_train(args, cfg)
        if args.command == "export-scores":
            return _run_track(args, cfg, dump_dir=args.out)
    except ConfigError as exc:
        print(f"dfp: configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DataError as exc:
        print(f"dfp: malformed data: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"dfp: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"dfp: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
