"""Dense optical flow: coarse-to-fine Horn-Schunck with image warping.

At each pyramid level the second frame is warped towards the first with
the current flow estimate, the brightness-constancy constraint is
linearised around that estimate, and the resulting quadratic energy

    E(u, v) = sum_p (Ix (u - u0) + Iy (v - v0) + It)^2
              + alpha^2 * sum_{p~q} ((u_p - u_q)^2 + (v_p - v_q)^2)

is minimised by red-black Gauss-Seidel sweeps over a 4-neighbourhood.
Each half-sweep minimises E exactly over one colour class, so E never
increases within a level.
"""
import hashlib
import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import FormatError, ShapeError
from .video_io import bilinear_resample

FLO_MAGIC = 202021.25
FLOW_CLIP = 20.0
MIN_LEVEL_SIZE = 8
PRESMOOTH_SIGMA = 1.0


@dataclass(frozen=True)
class FlowConfig:
    pyramid_levels: int = 3
    scale_factor: float = 0.5
    smoothness_alpha: float = 15.0
    iterations_per_level: int = 100

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not 0 < self.scale_factor < 1:
            raise ValueError("scale_factor must lie in (0, 1)")
        if not self.smoothness_alpha > 0:
            raise ValueError("smoothness_alpha must be > 0")
        if self.iterations_per_level < 1:
            raise ValueError("iterations_per_level must be >= 1")

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class FlowField:
    u: np.ndarray  # (height, width) horizontal displacement, px/frame
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ShapeError(f"u {self.u.shape} and v {self.v.shape} must be equal 2-D shapes")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("flow contains non-finite values")

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width)), np.zeros((height, width)))


def to_grayscale(frame):
    """ITU-R 601 luma of an RGB frame, as float64 in [0, 255]."""
    rgb = np.asarray(frame, dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


# --- solver pieces --------------------------------------------------------


def _pyramid_shapes(height, width, cfg):
    shapes = [(height, width)]
    for _ in range(cfg.pyramid_levels - 1):
        h, w = shapes[-1]
        nh, nw = int(round(h * cfg.scale_factor)), int(round(w * cfg.scale_factor))
        if nh < MIN_LEVEL_SIZE or nw < MIN_LEVEL_SIZE:
            break
        shapes.append((nh, nw))
    return shapes


def _gradients(img):
    p = np.pad(img, 1, mode="edge")
    ix = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    iy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return ix, iy


def _warp(img, u, v):
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    return ndimage.map_coordinates(img, [yy + v, xx + u], order=1, mode="nearest")


def _neighbour_count(shape):
    h, w = shape
    count = np.full(shape, 4.0)
    count[0, :] -= 1
    count[-1, :] -= 1
    count[:, 0] -= 1
    count[:, -1] -= 1
    return count


def _neighbour_sum(f):
    s = np.zeros_like(f)
    s[1:, :] += f[:-1, :]
    s[:-1, :] += f[1:, :]
    s[:, 1:] += f[:, :-1]
    s[:, :-1] += f[:, 1:]
    return s


def hs_energy(u, v, ix, iy, residual0, alpha):
    """Linearised Horn-Schunck energy. ``residual0 = It - Ix u0 - Iy v0``."""
    data = ix * u + iy * v + residual0
    smooth = (
        np.sum(np.diff(u, axis=0) ** 2) + np.sum(np.diff(u, axis=1) ** 2)
        + np.sum(np.diff(v, axis=0) ** 2) + np.sum(np.diff(v, axis=1) ** 2)
    )
    return float(np.sum(data ** 2) + alpha ** 2 * smooth)


def _solve_level(a, b, u, v, alpha, iterations, energies=None):
    warped = _warp(b, u, v)
    ax, ay = _gradients(a)
    bx, by = _gradients(warped)
    ix, iy = 0.5 * (ax + bx), 0.5 * (ay + by)
    it = warped - a
    residual0 = it - ix * u - iy * v

    count = _neighbour_count(a.shape)
    denom = alpha ** 2 * count + ix ** 2 + iy ** 2
    yy, xx = np.indices(a.shape)
    colours = [(yy + xx) % 2 == 0, (yy + xx) % 2 == 1]
    if energies is not None:
        energies.append(hs_energy(u, v, ix, iy, residual0, alpha))
    for _ in range(iterations):
        for mask in colours:
            ubar = _neighbour_sum(u) / count
            vbar = _neighbour_sum(v) / count
            # exact per-pixel minimiser of E given the neighbours
            corr = (ix * ubar + iy * vbar + residual0) / denom
            u = np.where(mask, ubar - ix * corr, u)
            v = np.where(mask, vbar - iy * corr, v)
        if energies is not None:
            energies.append(hs_energy(u, v, ix, iy, residual0, alpha))
    return u, v


def compute_flow(frame_a, frame_b, cfg=None, energies=None):
    """Flow from luminance raster ``frame_a`` to ``frame_b``.

    ``energies``, if a dict, receives the per-iteration energy trace of
    every level keyed by level index (0 = finest).
    """
    cfg = cfg or FlowConfig()
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"frames must be equal-sized 2-D rasters, got {a.shape} and {b.shape}")
    h, w = a.shape
    # identical frames are the solver's exact fixed point; constant frames carry no signal
    if np.array_equal(a, b) or (np.ptp(a) == 0 and np.ptp(b) == 0):
        return FlowField.zeros(h, w)

    a = ndimage.gaussian_filter(a, PRESMOOTH_SIGMA, mode="nearest")
    b = ndimage.gaussian_filter(b, PRESMOOTH_SIGMA, mode="nearest")
    shapes = _pyramid_shapes(h, w, cfg)
    pyr_a, pyr_b = [a], [b]
    for lh, lw in shapes[1:]:
        sigma = 0.5 / cfg.scale_factor
        pyr_a.append(bilinear_resample(ndimage.gaussian_filter(pyr_a[-1], sigma, mode="nearest"), lh, lw))
        pyr_b.append(bilinear_resample(ndimage.gaussian_filter(pyr_b[-1], sigma, mode="nearest"), lh, lw))

    u = np.zeros(shapes[-1])
    v = np.zeros(shapes[-1])
    for level in range(len(shapes) - 1, -1, -1):
        lh, lw = shapes[level]
        if u.shape != (lh, lw):
            ph, pw = u.shape
            u = bilinear_resample(u, lh, lw) * (lw / pw)
            v = bilinear_resample(v, lh, lw) * (lh / ph)
        trace = [] if energies is not None else None
        u, v = _solve_level(pyr_a[level], pyr_b[level], u, v, cfg.smoothness_alpha,
                            cfg.iterations_per_level, trace)
        if energies is not None:
            energies[level] = trace
    return FlowField(u, v)


def normalize_flow(flow):
    """Clip to +-20 px and scale into [-1, 1]; returns a (2, H, W) array."""
    stacked = np.stack([flow.u, flow.v])
    return np.clip(stacked, -FLOW_CLIP, FLOW_CLIP) / FLOW_CLIP


def flow_stack_for_window(frames, cfg=None, window_len=75, flow_fn=None):
    """Stack the normalised flow of consecutive pairs into ``(2, T, H, W)``.

    Slice ``t`` holds the flow from frame ``t`` to ``t + 1``; the last
    slice repeats the one before it since ``T`` frames form ``T - 1`` pairs.
    ``flow_fn(t)`` may supply precomputed flows (e.g. from a cache).
    """
    if len(frames) != window_len:
        raise ShapeError(f"expected exactly {window_len} frames, got {len(frames)}")
    h, w = np.asarray(frames[0]).shape
    out = np.zeros((2, window_len, h, w))
    for t in range(window_len - 1):
        flow = flow_fn(t) if flow_fn else compute_flow(frames[t], frames[t + 1], cfg)
        out[:, t] = normalize_flow(flow)
    if window_len > 1:
        out[:, -1] = out[:, -2]
    return out


# --- Middlebury .flo ------------------------------------------------------


def write_flo(path, flow):
    h, w = flow.u.shape
    with open(path, "wb") as f:
        np.array([FLO_MAGIC], dtype="<f4").tofile(f)
        np.array([w, h], dtype="<i4").tofile(f)
        np.stack([flow.u, flow.v], axis=-1).astype("<f4").tofile(f)


def read_flo(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12:
        raise FormatError(f"{path}: truncated .flo header")
    magic = np.frombuffer(data[:4], dtype="<f4")[0]
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad .flo magic")
    w, h = (int(x) for x in np.frombuffer(data[4:12], dtype="<i4"))
    if w < 1 or h < 1:
        raise FormatError(f"{path}: invalid dimensions {w}x{h}")
    body = data[12:]
    if len(body) != w * h * 8:
        raise FormatError(f"{path}: expected {w * h * 8} data bytes, found {len(body)}")
    uv = np.frombuffer(body, dtype="<f4").reshape(h, w, 2).astype(np.float64)
    return FlowField(uv[..., 0].copy(), uv[..., 1].copy())


class FlowCache:
    """On-disk .flo cache keyed by (video, frame index, FlowConfig digest, size)."""

    def __init__(self, root):
        self.root = root

    def path(self, video_key, index, cfg, shape):
        sub = f"{cfg.digest()}_{shape[1]}x{shape[0]}"
        return os.path.join(self.root, video_key, sub, f"{index:06d}.flo")

    def get(self, video_key, index, frame_a, frame_b, cfg):
        path = self.path(video_key, index, cfg, np.shape(frame_a))
        if os.path.exists(path):
            return read_flo(path)
        flow = compute_flow(frame_a, frame_b, cfg)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = path + ".tmp"
        write_flo(tmp, flow)
        os.replace(tmp, path)
        # round-trip through float32 so cached and fresh values agree
        return read_flo(path)
