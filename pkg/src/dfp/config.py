"""Run configuration: one flat key=value schema shared by every command.

Defaults follow the reference operating point (4x4 filter, 100 knots at 0.1
spacing, memory of 50, 10 initial recursions, refinement every 20 frames,
5 predictor recursions, hinge threshold 0.05, label sigma factor 1/4,
3 episode frames from 60-frame segments, classification weight 100); the
remaining constants are artifact decisions, all overridable.
"""

import dataclasses
from dataclasses import dataclass


class ConfigError(ValueError):
    """Configuration file or override is invalid."""


@dataclass
class Config:
    # model
    filter_size: int = 4
    rbf_knots: int = 100
    rbf_spacing: float = 0.1
    lambda_init: float = 0.01
    mask_center: float = 3.0
    mask_width: float = 1.0
    label_sigma_factor: float = 0.25

    # optimizer
    init_recursions: int = 10
    refine_interval: int = 20
    refine_recursions: int = 2
    distractor_recursions: int = 1
    predict_recursions: int = 5
    gd_step_length: float = 0.05
    optimizer: str = "sd"
    update_mode: str = "ours"
    model_avg_gamma: float = 0.1

    # features and tracking
    extractor: str = "gradhist"
    feature_stride: int = 4
    identity_stride: int = 16
    gradient_gain: float = 4.0
    feature_rms: float = 0.085
    patch_size: int = 288
    search_area_scale: float = 5.0
    memory_capacity: int = 50
    tau_mem: float = 0.25
    distractor_ratio: float = 0.5
    distractor_min_distance: float = 3.0
    scale_factors: tuple = (0.9216, 0.96, 1.0, 1.04, 1.0816)
    scale_damping: float = 1.02

    # first-frame augmentation
    aug_shift_fraction: float = 0.25
    aug_rotations: tuple = (-5.0, 5.0, 10.0)
    aug_blur_sigmas: tuple = (1.0, 2.0)
    aug_scale_jitters: tuple = (0.96, 1.04)
    aug_brightness: tuple = (-0.05, 0.05)
    aug_sample_weight: float = 1.0

    # offline fitting and episodes
    hinge_threshold: float = 0.05
    episode_frames: int = 3
    segment_length: int = 60
    cls_loss_weight: float = 100.0
    meta_knots: int = 16
    meta_budget: int = 500
    meta_perturbation: float = 0.2
    meta_step: float = 2.0
    seed: int = 0
    params_file: str = ""

    def validate(self):
        positive_ints = (
            "filter_size",
            "rbf_knots",
            "feature_stride",
            "identity_stride",
            "patch_size",
            "memory_capacity",
            "refine_interval",
            "episode_frames",
            "segment_length",
            "meta_knots",
            "meta_budget",
        )
        for key in positive_ints:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be a positive integer")
        nonneg_ints = (
            "init_recursions",
            "refine_recursions",
            "distractor_recursions",
            "predict_recursions",
        )
        for key in nonneg_ints:
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be nonnegative")
        positive_floats = (
            "rbf_spacing",
            "mask_width",
            "label_sigma_factor",
            "gd_step_length",
            "search_area_scale",
            "distractor_min_distance",
            "scale_damping",
            "cls_loss_weight",
            "gradient_gain",
            "meta_perturbation",
            "meta_step",
        )
        for key in positive_floats:
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        for key in ("lambda_init", "tau_mem", "aug_shift_fraction", "feature_rms"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be nonnegative")
        if self.rbf_knots < 2:
            raise ConfigError("rbf_knots must be at least 2")
        if self.meta_knots < 2:
            raise ConfigError("meta_knots must be at least 2")
        if not 0 < self.distractor_ratio <= 1:
            raise ConfigError("distractor_ratio must lie in (0, 1]")
        if not 0 <= self.model_avg_gamma <= 1:
            raise ConfigError("model_avg_gamma must lie in [0, 1]")
        if not 0 < self.hinge_threshold < 1:
            raise ConfigError("hinge_threshold must lie in (0, 1)")
        if self.optimizer not in ("sd", "gd", "init"):
            raise ConfigError(f"optimizer must be sd, gd or init, not {self.optimizer!r}")
        if self.update_mode not in ("ours", "no_update", "model_averaging"):
            raise ConfigError(f"unknown update_mode {self.update_mode!r}")
        if self.extractor not in ("gradhist", "identity"):
            raise ConfigError(f"extractor must be gradhist or identity, not {self.extractor!r}")
        if self.patch_size % self.feature_stride:
            raise ConfigError("patch_size must be divisible by feature_stride")
        if any(s <= 0 for s in self.scale_factors):
            raise ConfigError("scale_factors must be positive")
        if any(s <= 0 for s in self.aug_scale_jitters):
            raise ConfigError("aug_scale_jitters must be positive")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}


def _parse_value(key, raw, where):
    kind = _FIELDS[key].type
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (tuple, "tuple"):
            parts = [p for p in raw.replace(",", " ").split() if p]
            return tuple(float(p) for p in parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for key {key!r}: {raw!r}") from exc


def apply_setting(cfg, key, raw, where="<override>"):
    key = key.strip()
    if key not in _FIELDS:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    setattr(cfg, key, _parse_value(key, raw.strip(), where))


def load_config(path=None, overrides=()):
    """Build a Config from an optional key = value file plus --set overrides."""
    cfg = Config()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, raw = stripped.partition("=")
                apply_setting(cfg, key, raw, where=f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        apply_setting(cfg, key, raw)
    cfg.validate()
    return cfg
