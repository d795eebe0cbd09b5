"""Labeled two-stream samples from annotated videos.

Positive windows come from annotated strokes, negative windows from
stroke-free stretches. Frames are resized to the model's input size before
the RGB cuboid is built and before optical flow is computed.
"""
import random
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ShortVideoWarning
from .optical_flow import FlowConfig, compute_flow, flow_stack_for_window, to_grayscale
from .video_io import Segment, resize_bilinear

NON_STROKE = 0
STROKE = 1


@dataclass(frozen=True)
class SamplingConfig:
    window_len: int = 75
    negative_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.negative_ratio < 0:
            raise ValueError("negative_ratio must be >= 0")


@dataclass
class Sample:
    rgb: np.ndarray   # (3, T, H, W) in [0, 1]
    flow: np.ndarray  # (2, T, H, W) in [-1, 1]
    label: int
    window: Segment
    video_id: str = ""


def positive_windows(ann, window_len=75):
    """Windows covering each annotated stroke.

    A stroke no longer than the window gets one window centred on it
    (``begin + floor((duration - window_len) / 2)``), clamped inside the
    video. Longer strokes are tiled with ``floor(duration / window_len)``
    back-to-back windows starting at the stroke's begin.
    """
    if ann.total_frames < window_len:
        warnings.warn(
            f"{ann.video_id}: {ann.total_frames} frames < window length {window_len}",
            ShortVideoWarning, stacklevel=2,
        )
        return []
    last_start = ann.total_frames - window_len
    windows = []
    for s in ann.strokes:
        if s.duration <= window_len:
            start = s.begin + (s.duration - window_len) // 2
            start = min(max(start, 0), last_start)
            windows.append(Segment(start, start + window_len))
        else:
            for k in range(s.duration // window_len):
                start = s.begin + k * window_len
                windows.append(Segment(start, start + window_len))
    return windows


def stroke_free_starts(ann, window_len=75):
    """All window starts whose window shares no frame with any stroke."""
    if ann.total_frames < window_len:
        return []
    flags = np.zeros(ann.total_frames, dtype=np.int64)
    for s in ann.strokes:
        flags[s.begin:s.end] = 1
    prefix = np.concatenate([[0], np.cumsum(flags)])
    starts = np.arange(ann.total_frames - window_len + 1)
    free = prefix[starts + window_len] - prefix[starts] == 0
    return starts[free].tolist()


def negative_windows(ann, count, window_len=75, seed=0):
    """Up to ``count`` distinct stroke-free windows drawn uniformly, sorted by start."""
    if count < 0:
        raise ValueError("count must be >= 0")
    starts = stroke_free_starts(ann, window_len)
    chosen = random.Random(seed).sample(starts, min(count, len(starts)))
    return [Segment(s, s + window_len) for s in sorted(chosen)]


class VideoWindows:
    """Builds cuboids from one video, sharing resized frames and flows across windows.

    Flows are kept only for pairs at or after the latest requested window
    start, so building windows in ascending order stays memory-bounded.
    """

    def __init__(self, seq, out_w, out_h, flow_cfg=None, flow_cache=None, video_key="",
                 dtype=np.float64):
        self.seq = seq
        self.out_w, self.out_h = out_w, out_h
        self.flow_cfg = flow_cfg or FlowConfig()
        self.flow_cache = flow_cache
        self.video_key = video_key
        self.dtype = dtype
        self._resized = {}
        self._gray = {}
        self._flows = {}

    def resized(self, t):
        if t not in self._resized:
            self._resized[t] = resize_bilinear(self.seq.frames[t], self.out_w, self.out_h)
        return self._resized[t]

    def gray(self, t):
        if t not in self._gray:
            self._gray[t] = to_grayscale(self.resized(t))
        return self._gray[t]

    def flow(self, t):
        if t not in self._flows:
            a, b = self.gray(t), self.gray(t + 1)
            if self.flow_cache is not None:
                field = self.flow_cache.get(self.video_key, t, a, b, self.flow_cfg)
            else:
                field = compute_flow(a, b, self.flow_cfg)
            self._flows[t] = field
        return self._flows[t]

    def _evict_before(self, start):
        for store in (self._resized, self._gray, self._flows):
            for t in [t for t in store if t < start]:
                del store[t]

    def cuboids(self, window):
        if window.begin < 0 or window.end > self.seq.frame_count:
            raise ShapeError(
                f"window [{window.begin}, {window.end}) outside video of {self.seq.frame_count} frames"
            )
        self._evict_before(window.begin)
        n = len(window)
        rgb = np.empty((3, n, self.out_h, self.out_w), dtype=self.dtype)
        for i, t in enumerate(range(window.begin, window.end)):
            rgb[:, i] = np.moveaxis(self.resized(t), -1, 0) / 255.0
        grays = [self.gray(t) for t in range(window.begin, window.end)]
        flow = flow_stack_for_window(
            grays, self.flow_cfg, window_len=n,
            flow_fn=lambda i: self.flow(window.begin + i),
        ).astype(self.dtype, copy=False)
        return rgb, flow


def build_sample(seq, window, label, flow_cfg=None, out_w=320, out_h=128, window_len=75,
                 dtype=np.float64):
    if len(window) != window_len:
        raise ShapeError(f"window length {len(window)} != {window_len}")
    rgb, flow = VideoWindows(seq, out_w, out_h, flow_cfg, dtype=dtype).cuboids(window)
    return Sample(rgb, flow, int(label), window)


def build_samples(seq, ann, sampling, flow_cfg=None, out_w=320, out_h=128, flow_cache=None,
                  dtype=np.float64):
    """Positive and negative samples of one annotated video, ordered by window start."""
    pos = positive_windows(ann, sampling.window_len)
    n_neg = int(round(sampling.negative_ratio * len(pos)))
    neg = negative_windows(ann, n_neg, sampling.window_len, seed=sampling.seed)
    labelled = sorted([(w, STROKE) for w in pos] + [(w, NON_STROKE) for w in neg],
                      key=lambda item: (item[0].begin, item[1]))
    builder = VideoWindows(seq, out_w, out_h, flow_cfg, flow_cache, ann.video_id, dtype)
    samples = []
    for window, label in labelled:
        rgb, flow = builder.cuboids(window)
        samples.append(Sample(rgb, flow, label, window, ann.video_id))
    return samples


def epoch_iterator(samples, batch_size=10, seed=0, shuffle=True, epoch=0):
    """Batches (lists of samples) for one epoch.

    With shuffling, the order is a Fisher-Yates permutation seeded with
    ``seed ^ epoch``; the final partial batch is kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(samples)))
    if shuffle:
        random.Random(seed ^ epoch).shuffle(order)
    for i in range(0, len(order), batch_size):
        yield [samples[j] for j in order[i:i + batch_size]]


def stack_batch(batch):
    rgb = np.stack([s.rgb for s in batch])
    flow = np.stack([s.flow for s in batch])
    labels = np.array([s.label for s in batch], dtype=np.intp)
    return rgb, flow, labels
