"""Temporal detection metrics and stroke-distribution statistics.

Conventions:
  * segments are half-open frame intervals;
  * detections are ranked by confidence, descending, ties broken by the
    earlier begin (then by video order when pooling videos);
  * each detection is matched greedily to the unmatched ground truth with
    the highest tIoU (earliest on ties); it is a true positive iff that
    tIoU reaches the threshold;
  * AP = sum over true positives of precision-at-rank / number of GT;
  * empty GT scores 1.0 with no detections and 0.0 otherwise.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np


def tiou(a, b):
    inter = max(0, min(a.end, b.end) - max(a.begin, b.begin))
    union = (a.end - a.begin) + (b.end - b.begin) - inter
    return inter / union if union > 0 else 0.0


def _ranked(dets):
    """Detections as (video_index, detection) ranked for evaluation."""
    return sorted(dets, key=lambda vd: (-vd[1].confidence, vd[1].segment.begin, vd[0]))


def _match(ranked, gts_by_video, threshold):
    """True-positive flags for ranked (video_index, detection) pairs."""
    used = {v: [False] * len(g) for v, g in gts_by_video.items()}
    flags = []
    for v, det in ranked:
        best, best_j = -1.0, -1
        for j, gt in enumerate(gts_by_video.get(v, [])):
            if used[v][j]:
                continue
            iou = tiou(det.segment, gt)
            if iou > best:
                best, best_j = iou, j
        hit = best_j >= 0 and best >= threshold
        if hit:
            used[v][best_j] = True
        flags.append(hit)
    return flags


def _ap_from_flags(flags, n_gt):
    if n_gt == 0:
        return 1.0 if not flags else 0.0
    tp = 0
    total = 0.0
    for rank, hit in enumerate(flags, start=1):
        if hit:
            tp += 1
            total += tp / rank
    return total / n_gt


def pr_points(flags, n_gt):
    """(rank, precision, recall) after each ranked detection."""
    points = []
    tp = 0
    for rank, hit in enumerate(flags, start=1):
        tp += hit
        points.append((rank, tp / rank, tp / n_gt if n_gt else 0.0))
    return points


def average_precision(dets, gts, iou_threshold=0.5):
    """AP of detections against ground-truth segments of a single video."""
    ranked = _ranked([(0, d) for d in dets])
    flags = _match(ranked, {0: list(gts)}, iou_threshold)
    return _ap_from_flags(flags, len(gts))


@dataclass
class EvalReport:
    thresholds: list
    ap: list
    mAP: float
    giou_per_video: dict = field(default_factory=dict)
    mean_giou: float = 1.0
    num_detections: int = 0
    num_ground_truth: int = 0

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def render(self):
        lines = ["tIoU threshold  AP"]
        lines += [f"{t:<15.2f} {a:.6f}" for t, a in zip(self.thresholds, self.ap)]
        lines.append(f"mAP             {self.mAP:.6f}")
        lines.append("")
        width = max([len("video")] + [len(v) for v in self.giou_per_video])
        lines.append(f"{'video':<{width}}  G-IoU")
        lines += [f"{v:<{width}}  {g:.6f}" for v, g in self.giou_per_video.items()]
        lines.append(f"{'mean':<{width}}  {self.mean_giou:.6f}")
        lines.append(f"detections: {self.num_detections}  ground truth: {self.num_ground_truth}")
        return "\n".join(lines) + "\n"


def mean_average_precision(per_video, thresholds=(0.5,), return_curves=False):
    """Pool detections across videos (matching stays within each video).

    ``per_video`` maps video_id -> (detections, ground-truth segments).
    Returns ``(mAP, [AP per threshold])``, plus the PR points per threshold
    when ``return_curves`` is set.
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise ValueError("at least one tIoU threshold is required")
    vids = list(per_video)
    pooled = [(i, d) for i, v in enumerate(vids) for d in per_video[v][0]]
    gts = {i: list(per_video[v][1]) for i, v in enumerate(vids)}
    n_gt = sum(len(g) for g in gts.values())
    ranked = _ranked(pooled)
    aps, curves = [], []
    for th in thresholds:
        flags = _match(ranked, gts, th)
        aps.append(_ap_from_flags(flags, n_gt))
        curves.append(pr_points(flags, n_gt))
    m = float(np.mean(aps))
    return (m, aps, curves) if return_curves else (m, aps)


def global_iou(dets, gts, total_frames):
    """Frame-level IoU between the union of detections and the union of GT."""
    det_mask = np.zeros(total_frames, dtype=bool)
    gt_mask = np.zeros(total_frames, dtype=bool)
    for s in dets:
        det_mask[max(s.begin, 0):min(s.end, total_frames)] = True
    for s in gts:
        gt_mask[max(s.begin, 0):min(s.end, total_frames)] = True
    union = int(np.count_nonzero(det_mask | gt_mask))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(det_mask & gt_mask)) / union


def evaluate(per_video, thresholds=(0.5,)):
    """Full report. ``per_video``: video_id -> (detections, AnnotationSet)."""
    pairs = {v: (dets, ann.strokes) for v, (dets, ann) in per_video.items()}
    m, aps = mean_average_precision(pairs, thresholds)
    giou = {
        v: global_iou([d.segment for d in dets], ann.strokes, ann.total_frames)
        for v, (dets, ann) in per_video.items()
    }
    return EvalReport(
        thresholds=list(thresholds),
        ap=aps,
        mAP=m,
        giou_per_video=giou,
        mean_giou=float(np.mean(list(giou.values()))) if giou else 1.0,
        num_detections=sum(len(d) for d, _ in per_video.values()),
        num_ground_truth=sum(len(a.strokes) for _, a in per_video.values()),
    )


# --- stroke distribution --------------------------------------------------


@dataclass
class StrokeStats:
    strokes_per_1k_frames: float
    mean: float | None
    std: float | None
    min: int | None
    max: int | None
    count: int = 0
    total_frames: int = 0


def stroke_stats(ann_sets, population=True):
    """Stroke rate per 1000 frames and pooled duration statistics."""
    ann_sets = list(ann_sets)
    total = sum(a.total_frames for a in ann_sets)
    if total <= 0:
        raise ValueError("stroke statistics need a positive total frame count")
    durations = np.array([s.end - s.begin for a in ann_sets for s in a.strokes], dtype=float)
    rate = 1000.0 * len(durations) / total
    if len(durations) == 0:
        return StrokeStats(rate, None, None, None, None, 0, total)
    ddof = 0 if population or len(durations) < 2 else 1
    return StrokeStats(
        rate, float(durations.mean()), float(durations.std(ddof=ddof)),
        int(durations.min()), int(durations.max()), len(durations), total,
    )


STATS_HEADER = ("Set", "# Strokes/1K frames", "Mean", "Min", "Max")


def stats_row(name, st):
    if st.mean is None:
        return (name, f"{st.strokes_per_1k_frames:.2f}", "-", "-", "-")
    return (name, f"{st.strokes_per_1k_frames:.2f}", f"{st.mean:.1f}±{st.std:.2f}", str(st.min), str(st.max))


def render_stats_table(rows):
    """Aligned text table; ``rows`` is a list of (set name, StrokeStats)."""
    cells = [STATS_HEADER] + [stats_row(name, st) for name, st in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(STATS_HEADER))]
    out = []
    for k, r in enumerate(cells):
        out.append(" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if k == 0:
            out.append("-+-".join("-" * w for w in widths))
    return "\n".join(out) + "\n"
