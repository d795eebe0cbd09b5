"""Frame directories, annotations, bilinear resizing and checkpoints.

A video on disk is a directory holding ``meta.json`` plus one binary PPM
(P6, maxval 255) per frame, named ``frame_000000.ppm`` upward.
"""
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ShapeError

FRAME_NAME = "frame_{:06d}.ppm"
META_NAME = "meta.json"


@dataclass(frozen=True, order=True)
class Segment:
    """Half-open frame interval ``[begin, end)``."""

    begin: int
    end: int

    def __post_init__(self):
        if not (0 <= self.begin < self.end):
            raise ValueError(f"invalid segment [{self.begin}, {self.end})")

    def __len__(self):
        return self.end - self.begin

    @property
    def duration(self):
        return self.end - self.begin


@dataclass
class FrameSequence:
    frames: np.ndarray  # (frame_count, height, width, 3) uint8
    fps: float = 25.0

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4 or f.shape[-1] != 3 or f.dtype != np.uint8:
            raise ShapeError(f"frames must be (N, H, W, 3) uint8, got {f.shape} {f.dtype}")
        if f.shape[0] < 1:
            raise ShapeError("a frame sequence needs at least one frame")
        if not self.fps > 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")

    @property
    def frame_count(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]


@dataclass
class AnnotationSet:
    video_id: str
    total_frames: int
    strokes: list = field(default_factory=list)

    def __post_init__(self):
        validate_strokes(self.strokes, self.total_frames)


def validate_strokes(strokes, total_frames):
    """Raise FormatError naming the first offending segment index."""
    prev_end = None
    for i, s in enumerate(strokes):
        if not (0 <= s.begin < s.end):
            raise FormatError(f"stroke {i}: begin {s.begin} must be >= 0 and < end {s.end}")
        if s.end > total_frames:
            raise FormatError(f"stroke {i}: [{s.begin}, {s.end}) exceeds total_frames {total_frames}")
        if prev_end is not None and s.begin < prev_end:
            raise FormatError(f"stroke {i}: [{s.begin}, {s.end}) overlaps or precedes stroke {i - 1}")
        prev_end = s.end


# --- PPM ------------------------------------------------------------------


def write_ppm(path, image):
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"PPM writer expects (H, W, 3) uint8, got {image.shape} {image.dtype}")
    h, w, _ = image.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())


def _ppm_tokens(data, count, start):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    i = start
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated header")
        tokens.append(data[i:j])
        i = j
    return tokens, i + 1  # exactly one whitespace byte precedes the raster


def read_ppm(path):
    with open(path, "rb") as f:
        data = f.read()
    name = os.fspath(path)
    if data[:2] != b"P6":
        raise FormatError(f"{name}: not a binary PPM (P6)")
    try:
        (w, h, maxval), offset = _ppm_tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except (FormatError, ValueError) as exc:
        raise FormatError(f"{name}: malformed PPM header ({exc})") from None
    if maxval != 255:
        raise FormatError(f"{name}: maxval {maxval} unsupported (only 255)")
    if w < 1 or h < 1:
        raise FormatError(f"{name}: invalid dimensions {w}x{h}")
    raster = data[offset:offset + w * h * 3]
    if len(raster) != w * h * 3:
        raise FormatError(f"{name}: raster truncated ({len(raster)} of {w * h * 3} bytes)")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def write_frame_dir(seq, path):
    os.makedirs(path, exist_ok=True)
    meta = {"width": seq.width, "height": seq.height, "fps": seq.fps, "frame_count": seq.frame_count}
    with open(os.path.join(path, META_NAME), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    for i, frame in enumerate(seq.frames):
        write_ppm(os.path.join(path, FRAME_NAME.format(i)), frame)


def read_meta(path):
    meta_path = os.path.join(path, META_NAME)
    with open(meta_path) as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{meta_path}: {exc}") from None
    for key in ("width", "height", "fps", "frame_count"):
        if key not in meta:
            raise FormatError(f"{meta_path}: missing key {key!r}")
    return meta


def read_frame_dir(path):
    meta = read_meta(path)
    n, w, h = int(meta["frame_count"]), int(meta["width"]), int(meta["height"])
    frames = np.empty((n, h, w, 3), dtype=np.uint8)
    for i in range(n):
        name = os.path.join(path, FRAME_NAME.format(i))
        if not os.path.exists(name):
            raise FormatError(f"missing frame file {name}")
        img = read_ppm(name)
        if img.shape != (h, w, 3):
            raise FormatError(f"{name}: dimensions {img.shape[1]}x{img.shape[0]} differ from meta {w}x{h}")
        frames[i] = img
    return FrameSequence(frames, float(meta["fps"]))


# --- resizing -------------------------------------------------------------


def _axis_taps(n_in, n_out):
    # pixel-centre alignment, clamped at the edges
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_resample(image, out_h, out_w):
    """Bilinear resampling of a float array whose first two axes are (H, W)."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size must be positive, got {out_w}x{out_h}")
    img = np.asarray(image, dtype=float)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    y0, y1, fy = _axis_taps(h, out_h)
    x0, x1, fx = _axis_taps(w, out_w)
    extra = (1,) * (img.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)
    rows0, rows1 = img[y0], img[y1]
    top = rows0[:, x0] * (1 - fx) + rows0[:, x1] * fx
    bottom = rows1[:, x0] * (1 - fx) + rows1[:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_bilinear(frame, out_w=320, out_h=128):
    """Resize an 8-bit frame; results are rounded half-up to integers.

    Same-size resizing returns an identical copy.
    """
    frame = np.asarray(frame)
    if out_w < 1 or out_h < 1:
        raise ShapeError(f"target size must be positive, got {out_w}x{out_h}")
    if frame.shape[0] < 2 or frame.shape[1] < 2:
        raise ShapeError(f"source must be at least 2x2, got {frame.shape[1]}x{frame.shape[0]}")
    if frame.shape[:2] == (out_h, out_w):
        return frame.copy()
    out = bilinear_resample(frame, out_h, out_w)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


# --- annotations ----------------------------------------------------------


def annotations_to_dict(ann):
    return {
        "video_id": ann.video_id,
        "total_frames": ann.total_frames,
        "strokes": [{"begin": s.begin, "end": s.end} for s in ann.strokes],
    }


def annotations_from_dict(doc, source="annotations"):
    if not isinstance(doc, dict):
        raise FormatError(f"{source}: expected a JSON object")
    try:
        video_id = doc["video_id"]
        total = doc["total_frames"]
        raw = doc["strokes"]
    except KeyError as exc:
        raise FormatError(f"{source}: missing key {exc}") from None
    if not isinstance(video_id, str) or not isinstance(total, int) or not isinstance(raw, list):
        raise FormatError(f"{source}: wrong field types")
    strokes = []
    for i, item in enumerate(raw):
        try:
            b, e = item["begin"], item["end"]
        except (KeyError, TypeError):
            raise FormatError(f"{source}: stroke {i} needs integer 'begin' and 'end'") from None
        if not isinstance(b, int) or not isinstance(e, int):
            raise FormatError(f"{source}: stroke {i} needs integer 'begin' and 'end'")
        if not (0 <= b < e):
            raise FormatError(f"{source}: stroke {i}: begin {b} must be >= 0 and < end {e}")
        strokes.append(Segment(b, e))
    try:
        validate_strokes(strokes, total)
    except FormatError as exc:
        raise FormatError(f"{source}: {exc}") from None
    return AnnotationSet(video_id, total, strokes)


def write_annotations(ann, path):
    with open(path, "w") as f:
        json.dump(annotations_to_dict(ann), f, indent=2)
        f.write("\n")


def read_annotations(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return annotations_from_dict(doc, os.fspath(path))


# --- checkpoints ----------------------------------------------------------
# Layout (little-endian):
#   b"TSN1", u32 version, u32 record_count, u32 step_count,
#   then per record: u32 name_len, name (utf-8), u32 rank, rank * u32 extents,
#   float32 data.
# Optimizer velocities are stored as records named "velocity/<param>".

CKPT_MAGIC = b"TSN1"
CKPT_VERSION = 1
VELOCITY_PREFIX = "velocity/"


def save_checkpoint(params, path, optim_state=None):
    records = list(params.items())
    step_count = 0
    if optim_state is not None:
        records += [(VELOCITY_PREFIX + k, v) for k, v in optim_state.velocity.items()]
        step_count = optim_state.step_count
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<III", CKPT_VERSION, len(records), step_count))
        for name, arr in records:
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: checkpoint truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, count=1):
        return struct.unpack(f"<{count}I", self.take(4 * count))


def load_checkpoint(path, expected_shapes=None):
    """Return ``(params, optim_state_or_None)``.

    ``expected_shapes`` (name -> shape) triggers an architecture check that
    reports every differing parameter.
    """
    from .tensor_core import OptimState

    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, os.fspath(path))
    if r.take(4) != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic (not a TSN1 checkpoint)")
    version, count, step_count = r.u32(3)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    params, velocity = {}, {}
    for _ in range(count):
        (name_len,) = r.u32()
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: corrupt record name") from None
        (rank,) = r.u32()
        shape = r.u32(rank) if rank else ()
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
        if name.startswith(VELOCITY_PREFIX):
            velocity[name[len(VELOCITY_PREFIX):]] = arr
        else:
            params[name] = arr
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    if expected_shapes is not None:
        check_shapes(params, expected_shapes, source=os.fspath(path))
    state = OptimState(velocity, step_count) if velocity else None
    return params, state


def check_shapes(params, expected_shapes, source="checkpoint"):
    diffs = []
    for name, shape in expected_shapes.items():
        if name not in params:
            diffs.append(f"{name}: missing (expected {tuple(shape)})")
        elif tuple(params[name].shape) != tuple(shape):
            diffs.append(f"{name}: {tuple(params[name].shape)} != expected {tuple(shape)}")
    for name in params:
        if name not in expected_shapes:
            diffs.append(f"{name}: unexpected parameter")
    if diffs:
        raise ShapeError(f"{source}: architecture mismatch\n  " + "\n  ".join(diffs))
