"""Deterministic synthetic scenes with exact ground truth.

A textured, radially tapered target blob moves on a smooth bounded path
over a cluttered background, optionally accompanied by look-alike
distractor blobs and per-frame appearance drift. Blobs are placed with
bilinear splatting, which preserves the first moment, so the rendered
centroid equals the emitted box center exactly (before noise)."""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .interp import gaussian_blur
from .tracking import Frame, TargetBox


@dataclass
class SynthSceneSpec:
    seed: int = 0
    frame_size: int = 160
    target_size: float = 22.0
    target_contrast: float = 0.2
    texture_scale: float = 3.0
    distractor_count: int = 0
    distractor_similarity: float = 0.9
    distractor_separation: float = 1.25
    drift_rate: float = 0.0
    motion_amplitude: float = 30.0
    motion_period: float = 70.0
    noise_level: float = 0.0
    clutter: float = 0.08
    background_level: float = 0.45

    def validate(self):
        if self.frame_size < 16:
            raise ValueError("frame_size too small")
        if not 4.0 <= self.target_size <= self.frame_size / 2:
            raise ValueError("target_size out of range")
        if not 0.0 <= self.distractor_similarity <= 1.0:
            raise ValueError("distractor_similarity must lie in [0, 1]")
        if self.distractor_separation < 0:
            raise ValueError("distractor_separation must be nonnegative")
        if self.drift_rate < 0 or self.noise_level < 0 or self.clutter < 0:
            raise ValueError("rates and amplitudes must be nonnegative")
        return self


def _blob_mask(radius):
    """Radially symmetric raised-cosine disc sampled on an odd grid."""
    half = int(np.ceil(radius)) + 1
    t = np.arange(-half, half + 1, dtype=np.float64)
    rho = np.hypot(t[:, None], t[None, :])
    inner = 0.55 * radius
    mask = np.where(
        rho <= inner,
        1.0,
        0.5 * (1.0 + np.cos(np.pi * np.clip((rho - inner) / (radius - inner), 0.0, 1.0))),
    )
    mask[rho >= radius] = 0.0
    return mask


def _texture(rng, shape, scale, weight=None):
    """Smooth random field, zero mean and unit std (weighted when a mask is
    given, so small blobs keep full contrast over their visible support)."""
    tex = gaussian_blur(rng.standard_normal(shape), scale / 2.0)
    if weight is None:
        tex -= tex.mean()
        std = tex.std()
    else:
        wsum = weight.sum()
        tex -= (tex * weight).sum() / wsum
        std = np.sqrt(((tex**2) * weight).sum() / wsum)
    if std > 0:
        tex /= std
    return tex


def _splat(canvas, alpha, colored, pos):
    """Alpha-composite a pre-multiplied stamp at a continuous position.

    Bilinear splitting of the stamp across the four neighboring integer
    offsets moves its mass (and first moment) by exactly the fractional
    part, so the composited centroid lands on pos.
    """
    py, px = pos
    iy, ix = int(np.floor(py)), int(np.floor(px))
    fy, fx = py - iy, px - ix
    n = alpha.shape[0]
    a = np.zeros((n + 1, n + 1))
    c = np.zeros((n + 1, n + 1))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            w = wy * wx
            if w == 0.0:
                continue
            a[dy : dy + n, dx : dx + n] += w * alpha
            c[dy : dy + n, dx : dx + n] += w * colored
    half = n // 2
    top, left = iy - half, ix - half
    h, w_ = canvas.shape
    y0, y1 = max(top, 0), min(top + n + 1, h)
    x0, x1 = max(left, 0), min(left + n + 1, w_)
    if y0 >= y1 or x0 >= x1:
        return
    sy, sx = y0 - top, x0 - left
    a_clip = a[sy : sy + (y1 - y0), sx : sx + (x1 - x0)]
    c_clip = c[sy : sy + (y1 - y0), sx : sx + (x1 - x0)]
    canvas[y0:y1, x0:x1] = canvas[y0:y1, x0:x1] * (1.0 - a_clip) + c_clip


class _Path:
    """Bounded Lissajous-style trajectory with rng-drawn phases."""

    def __init__(self, rng, size, margin, amplitude, period):
        self.cy = size / 2.0 + rng.uniform(-2, 2)
        self.cx = size / 2.0 + rng.uniform(-2, 2)
        cap = max(0.0, (size - 1) / 2.0 - margin)
        self.ay = min(amplitude, cap)
        self.ax = min(amplitude, cap)
        self.fy = rng.uniform(0.7, 1.3) / period
        self.fx = rng.uniform(0.7, 1.3) / period
        self.py = rng.uniform(0, 2 * np.pi)
        self.px = rng.uniform(0, 2 * np.pi)

    def at(self, t):
        return (
            self.cy + self.ay * np.sin(2 * np.pi * self.fy * t + self.py),
            self.cx + self.ax * np.sin(2 * np.pi * self.fx * t + self.px),
        )


def generate_scene(spec, num_frames):
    """Render a deterministic sequence; returns a list of (Frame, TargetBox)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    size = spec.frame_size
    radius = spec.target_size / 2.0
    mask = _blob_mask(radius)
    n = mask.shape[0]

    tex_a = _texture(rng, (n, n), spec.texture_scale, weight=mask)
    tex_b = _texture(rng, (n, n), spec.texture_scale, weight=mask)
    margin = n // 2 + 2
    path = _Path(rng, size, margin, spec.motion_amplitude, spec.motion_period)

    # distractors keep a minimum separation from the target path so they test
    # discrimination rather than forcing unresolvable occlusions
    sep = spec.distractor_separation * spec.target_size
    times = np.arange(max(num_frames, 1))
    target_track = np.array([path.at(t) for t in times])
    distractors = []
    for _ in range(spec.distractor_count):
        own = _texture(rng, (n, n), spec.texture_scale, weight=mask)
        dtex = spec.distractor_similarity * tex_a + (1.0 - spec.distractor_similarity) * own
        best, best_dist = None, -1.0
        for _try in range(200):
            cand = _Path(rng, size, margin, spec.motion_amplitude, spec.motion_period)
            track = np.array([cand.at(t) for t in times])
            dist = float(np.min(np.hypot(*(track - target_track).T)))
            if dist > best_dist:
                best, best_dist = cand, dist
            if dist >= sep:
                break
        distractors.append((dtex, best))

    background = np.full((size, size), spec.background_level)
    if spec.clutter > 0:
        background = background + spec.clutter * _texture(rng, (size, size), 6.0)

    out = []
    for t in range(num_frames):
        canvas = background.copy()
        u = min(1.0, spec.drift_rate * t)
        tex_t = (1.0 - u) * tex_a + u * tex_b
        for dtex, dpath in distractors:
            val = np.clip(0.5 + spec.target_contrast * dtex, 0.0, 1.0)
            _splat(canvas, mask, val * mask, dpath.at(t))
        val = np.clip(0.5 + spec.target_contrast * tex_t, 0.0, 1.0)
        pos = path.at(t)
        _splat(canvas, mask, val * mask, pos)
        if spec.noise_level > 0:
            canvas = canvas + spec.noise_level * rng.standard_normal((size, size))
        frame = Frame(np.clip(canvas, 0.0, 1.0), frame_index=t)
        box = TargetBox(pos[1], pos[0], spec.target_size, spec.target_size)
        out.append((frame, box))
    return out


def render_alpha(spec, pos):
    """The target's alpha layer alone at a continuous position (test hook)."""
    spec.validate()
    mask = _blob_mask(spec.target_size / 2.0)
    canvas = np.zeros((spec.frame_size, spec.frame_size))
    _splat(canvas, mask, mask, pos)
    return canvas


_SPEC_FIELDS = {f.name: f for f in dataclasses.fields(SynthSceneSpec)}


def parse_scene_line(line, where="<scene>"):
    """Parse 'name=... frames=N key=value ...' into (name, spec, num_frames,
    extras); extras holds the non-scene keys (currently only 'features')."""
    spec = SynthSceneSpec()
    frames = 60
    name = None
    extras = {}
    for token in line.split():
        if "=" not in token:
            raise ValueError(f"{where}: expected key=value, got {token!r}")
        key, _, raw = token.partition("=")
        if key == "frames":
            frames = int(raw)
        elif key == "name":
            name = raw
        elif key == "features":
            if raw not in ("image", "identity"):
                raise ValueError(f"{where}: features must be image or identity")
            extras["features"] = raw
        elif key in _SPEC_FIELDS:
            kind = _SPEC_FIELDS[key].type
            value = int(raw) if kind in (int, "int") else float(raw)
            setattr(spec, key, value)
        else:
            raise ValueError(f"{where}: unknown scene key {key!r}")
    spec.validate()
    if frames < 1:
        raise ValueError(f"{where}: frames must be positive")
    if name is None:
        name = f"scene{spec.seed:04d}"
    return name, spec, frames, extras


def load_scene_manifest(path):
    scenes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            scenes.append(parse_scene_line(line, where=f"{path}:{lineno}"))
    if not scenes:
        raise ValueError(f"{path}: no scenes defined")
    return scenes
