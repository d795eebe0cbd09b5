"""Deterministic synthetic annotated videos.

A small white "ball" drifts at constant velocity (at most 1 px/frame,
bouncing off the borders) over a static smooth texture with per-frame
noise. During each annotated stroke a large red "paddle" disk appears next
to the ball and swings horizontally by several pixels every frame, so
strokes carry both an appearance cue and a strong motion cue.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .video_io import AnnotationSet, FrameSequence, Segment, bilinear_resample

MIN_GAP = 75
BALL_COLOR = (250, 250, 250)
PADDLE_COLOR = (220, 40, 40)


@dataclass(frozen=True)
class SynthConfig:
    width: int = 320
    height: int = 128
    total_frames: int = 2000
    stroke_count: int = 4
    stroke_duration: tuple = (52, 296)
    noise_amplitude: int = 2
    seed: int = 0
    fps: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "stroke_duration", tuple(int(d) for d in self.stroke_duration))
        lo, hi = self.stroke_duration
        if self.width < 8 or self.height < 8:
            raise ConfigError("synthetic frames must be at least 8x8")
        if self.total_frames < 1 or self.stroke_count < 0 or self.noise_amplitude < 0:
            raise ConfigError("total_frames >= 1, stroke_count >= 0, noise_amplitude >= 0 required")
        if not 1 <= lo <= hi <= self.total_frames:
            raise ConfigError(f"stroke_duration {self.stroke_duration} must lie within [1, total_frames]")
        if self.total_frames < self.required_frames():
            raise ConfigError(
                f"{self.stroke_count} strokes of up to {hi} frames with {MIN_GAP}-frame gaps need "
                f"total_frames >= {self.required_frames()}, got {self.total_frames}"
            )

    def required_frames(self):
        if self.stroke_count == 0:
            return 1
        return self.stroke_count * self.stroke_duration[1] + (self.stroke_count - 1) * MIN_GAP

    @property
    def ball_radius(self):
        return max(2, round(self.height / 40))

    @property
    def paddle_radius(self):
        return max(3, round(self.height / 3))

    @property
    def swing_step(self):
        # per-frame paddle displacement, px
        return max(4, round(self.width / 40))


def place_strokes(cfg, rng):
    """Random stroke segments with at least MIN_GAP free frames between neighbours."""
    n = cfg.stroke_count
    if n == 0:
        return []
    lo, hi = cfg.stroke_duration
    durations = rng.integers(lo, hi + 1, size=n)
    slack = cfg.total_frames - int(durations.sum()) - (n - 1) * MIN_GAP
    # split the slack into n + 1 non-negative gaps
    cuts = np.sort(rng.integers(0, slack + 1, size=n))
    extra = np.diff(np.concatenate([[0], cuts]))
    strokes = []
    pos = 0
    for i in range(n):
        pos += int(extra[i]) + (MIN_GAP if i else 0)
        strokes.append(Segment(pos, pos + int(durations[i])))
        pos += int(durations[i])
    return strokes


def _background(cfg, rng):
    coarse = rng.uniform(0, 1, size=(cfg.height // 8 + 2, cfg.width // 8 + 2, 3))
    smooth = bilinear_resample(coarse, cfg.height, cfg.width)
    return 60.0 + 120.0 * smooth


def _ball_track(cfg, rng):
    r = cfg.ball_radius
    speed = rng.uniform(0.5, 1.0)
    angle = rng.uniform(0, 2 * np.pi)
    vx, vy = speed * np.cos(angle), speed * np.sin(angle)
    x = rng.uniform(r, cfg.width - 1 - r)
    y = rng.uniform(r, cfg.height - 1 - r)
    track = np.empty((cfg.total_frames, 2))
    for t in range(cfg.total_frames):
        track[t] = (x, y)
        x, y = x + vx, y + vy
        if not r <= x <= cfg.width - 1 - r:
            vx = -vx
            x = min(max(x, r), cfg.width - 1 - r)
        if not r <= y <= cfg.height - 1 - r:
            vy = -vy
            y = min(max(y, r), cfg.height - 1 - r)
    return track


def _disk(yy, xx, cx, cy, radius):
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2


def _swing_offset(k, step):
    # triangle wave 0, s, 2s, s, 0, ... : moves `step` px every frame
    return step * (2 - abs(k % 4 - 2))


def generate(cfg):
    """Render one video and its exactly matching annotations."""
    rng = np.random.default_rng(cfg.seed)
    strokes = place_strokes(cfg, rng)
    background = _background(cfg, rng)
    track = _ball_track(cfg, rng)
    in_stroke = np.full(cfg.total_frames, -1)
    for s in strokes:
        in_stroke[s.begin:s.end] = s.begin

    yy, xx = np.mgrid[0:cfg.height, 0:cfg.width]
    frames = np.empty((cfg.total_frames, cfg.height, cfg.width, 3), dtype=np.uint8)
    amp = cfg.noise_amplitude
    rp, rb = cfg.paddle_radius, cfg.ball_radius
    for t in range(cfg.total_frames):
        img = background.copy()
        bx, by = track[t]
        if in_stroke[t] >= 0:
            side = -1 if bx > cfg.width / 2 else 1
            px = bx + side * (rp + rb + 2) + side * _swing_offset(t - in_stroke[t], cfg.swing_step)
            img[_disk(yy, xx, px, by, rp)] = PADDLE_COLOR
        img[_disk(yy, xx, bx, by, rb)] = BALL_COLOR
        if amp:
            img += rng.integers(-amp, amp + 1, size=img.shape)
        frames[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    video_id = f"synth_{cfg.seed}"
    return FrameSequence(frames, cfg.fps), AnnotationSet(video_id, cfg.total_frames, strokes)


def video_seeds(seed, count, salt):
    seeds = []
    seen = set()
    for i in range(count):
        s = int(np.random.SeedSequence([seed, salt, i]).generate_state(1, dtype=np.uint64)[0])
        while s in seen:
            s += 1
        seen.add(s)
        seeds.append(s)
    return seeds


def generate_split(cfg, n_train, n_val, n_test, seed):
    """Three lists of ``(FrameSequence, AnnotationSet)`` with distinct per-video seeds."""
    splits = []
    used = set()
    for salt, (name, n) in enumerate((("train", n_train), ("valid", n_val), ("test", n_test))):
        videos = []
        for i, s in enumerate(video_seeds(seed, n, salt)):
            while s in used:
                s += 1
            used.add(s)
            seq, ann = generate(SynthConfig(**{**cfg.__dict__, "seed": s}))
            ann = AnnotationSet(f"{name}_{i:03d}", ann.total_frames, ann.strokes)
            videos.append((seq, ann))
        splits.append(videos)
    return tuple(splits)
