"""Whole-video inference with non-overlapping windows and run fusion."""
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import model as net
from .dataset import VideoWindows
from .errors import FormatError, ShortVideoWarning
from .video_io import Segment


@dataclass(frozen=True)
class Detection:
    segment: Segment
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class DetectorConfig:
    window_len: int = 75
    stroke_threshold: float = 0.5
    max_duration: int | None = None

    def __post_init__(self):
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if not 0.0 < self.stroke_threshold < 1.0:
            raise ValueError("stroke_threshold must lie in (0, 1)")
        if self.max_duration is not None and self.max_duration < 1:
            raise ValueError("max_duration must be >= 1 when set")


def sliding_windows(total_frames, window_len=75):
    """Back-to-back windows; a trailing partial window is dropped."""
    return [Segment(s, s + window_len) for s in range(0, total_frames - window_len + 1, window_len)]


def classify_video(params, seq, model_cfg, flow_cfg=None, det_cfg=None, flow_cache=None, video_key=""):
    """``[(window, p_stroke), ...]`` ordered by window start."""
    det_cfg = det_cfg or DetectorConfig()
    if det_cfg.window_len != model_cfg.input_t:
        raise ValueError(f"window_len {det_cfg.window_len} != model input_t {model_cfg.input_t}")
    windows = sliding_windows(seq.frame_count, det_cfg.window_len)
    if not windows:
        warnings.warn(
            f"{video_key or 'video'}: {seq.frame_count} frames is shorter than one "
            f"{det_cfg.window_len}-frame window", ShortVideoWarning, stacklevel=2,
        )
        return []
    builder = VideoWindows(seq, model_cfg.input_w, model_cfg.input_h, flow_cfg, flow_cache,
                           video_key, dtype=model_cfg.dtype)
    out = []
    for w in windows:
        rgb, flow = builder.cuboids(w)
        p = net.predict_proba(params, rgb, flow)
        out.append((w, float(p[1])))
    return out


def _split_run(begin, end, max_duration):
    if max_duration is None:
        return [(begin, end)]
    return [(s, min(s + max_duration, end)) for s in range(begin, end, max_duration)]


def fuse(window_probs, det_cfg=None):
    """Merge maximal runs of stroke windows (p >= threshold) into detections.

    Confidence is the mean stroke probability of the windows overlapping a
    detection. With ``max_duration`` each run is cut into consecutive
    chunks of at most that many frames.
    """
    det_cfg = det_cfg or DetectorConfig()
    for (a, _), (b, _) in zip(window_probs, window_probs[1:]):
        if a.end != b.begin:
            raise ValueError(f"windows [{a.begin}, {a.end}) and [{b.begin}, {b.end}) are not contiguous")
    dets = []
    run = []
    for item in list(window_probs) + [None]:
        if item is not None and item[1] >= det_cfg.stroke_threshold:
            run.append(item)
            continue
        if run:
            begin, end = run[0][0].begin, run[-1][0].end
            for b, e in _split_run(begin, end, det_cfg.max_duration):
                probs = [p for w, p in run if w.begin < e and w.end > b]
                conf = min(max(float(np.mean(probs)), 0.0), 1.0)
                dets.append(Detection(Segment(b, e), conf))
            run = []
    return dets


def detect(params, seq, model_cfg, flow_cfg=None, det_cfg=None, flow_cache=None, video_key=""):
    det_cfg = det_cfg or DetectorConfig()
    probs = classify_video(params, seq, model_cfg, flow_cfg, det_cfg, flow_cache, video_key)
    return fuse(probs, det_cfg)


# --- JSON -----------------------------------------------------------------


def detections_to_dict(video_id, dets):
    return {
        "video_id": video_id,
        "detections": [
            {"begin": d.segment.begin, "end": d.segment.end, "confidence": d.confidence} for d in dets
        ],
    }


def detections_from_dict(doc, source="detections"):
    try:
        video_id = doc["video_id"]
        items = doc["detections"]
        dets = [Detection(Segment(int(i["begin"]), int(i["end"])), float(i["confidence"])) for i in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{source}: invalid detection document ({exc})") from None
    if not isinstance(video_id, str):
        raise FormatError(f"{source}: video_id must be a string")
    return video_id, dets


def write_detections(path, per_video):
    """``per_video``: list of (video_id, detections). One video -> object, several -> array."""
    docs = [detections_to_dict(v, d) for v, d in per_video]
    with open(path, "w") as f:
        json.dump(docs[0] if len(docs) == 1 else docs, f, indent=2)
        f.write("\n")


def read_detections(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    docs = doc if isinstance(doc, list) else [doc]
    return [detections_from_dict(d, str(path)) for d in docs]
