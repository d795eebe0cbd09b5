"""Two-stream 3D CNN: an RGB branch and a flow branch fused before a 2-way head.

Each branch is four ``conv3d -> relu -> maxpool3d`` blocks, flattened and
mapped to a ``feature_dim`` vector followed by a ReLU. The two feature
vectors are concatenated as ``[rgb | flow]`` and mapped to two logits
(index 0 = NonStroke, 1 = Stroke).

Parameters live in a flat ``dict`` name -> ndarray, e.g. ``rgb.conv0.weight``
or ``head.bias``; insertion order is the canonical order.
"""
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .errors import ShapeError

BRANCHES = ("rgb", "flow")
NUM_BLOCKS = 4


@dataclass(frozen=True)
class ModelConfig:
    in_channels_rgb: int = 3
    in_channels_flow: int = 2
    conv_channels: tuple = (8, 16, 32, 64)
    feature_dim: int = 500
    num_classes: int = 2
    input_t: int = 75
    input_h: int = 128
    input_w: int = 320
    init_seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if len(self.conv_channels) != NUM_BLOCKS or min(self.conv_channels) < 1:
            raise ValueError(f"conv_channels must be {NUM_BLOCKS} positive integers")
        if self.feature_dim < 1 or self.num_classes < 2:
            raise ValueError("feature_dim must be > 0 and num_classes >= 2")
        if min(self.in_channels_rgb, self.in_channels_flow) < 1:
            raise ValueError("input channel counts must be positive")
        if min(self.pooled_extents()) < 1:
            raise ValueError(
                f"input extents {(self.input_t, self.input_h, self.input_w)} do not survive "
                f"{NUM_BLOCKS} halvings"
            )
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be 'float64' or 'float32'")

    def pooled_extents(self):
        t, h, w = self.input_t, self.input_h, self.input_w
        for _ in range(NUM_BLOCKS):
            t, h, w = t // 2, h // 2, w // 2
        return t, h, w

    @property
    def flat_dim(self):
        t, h, w = self.pooled_extents()
        return self.conv_channels[-1] * t * h * w

    def in_channels(self, branch):
        return self.in_channels_rgb if branch == "rgb" else self.in_channels_flow

    def param_shapes(self):
        shapes = {}
        for br in BRANCHES:
            c_prev = self.in_channels(br)
            for i, c in enumerate(self.conv_channels):
                shapes[f"{br}.conv{i}.weight"] = (c, c_prev, 3, 3, 3)
                shapes[f"{br}.conv{i}.bias"] = (c,)
                c_prev = c
            shapes[f"{br}.fc.weight"] = (self.feature_dim, self.flat_dim)
            shapes[f"{br}.fc.bias"] = (self.feature_dim,)
        shapes["head.weight"] = (self.num_classes, 2 * self.feature_dim)
        shapes["head.bias"] = (self.num_classes,)
        return shapes

    def shape_trace(self, branch="rgb"):
        """Activation shapes through one branch, block by block."""
        t, h, w = self.input_t, self.input_h, self.input_w
        trace = [(self.in_channels(branch), t, h, w)]
        for c in self.conv_channels:
            t, h, w = t // 2, h // 2, w // 2
            trace.append((c, t, h, w))
        trace += [(self.flat_dim,), (self.feature_dim,)]
        return trace


def init_params(cfg):
    """Uniform(-b, b) weights with b = sqrt(1 / fan_in); zero biases."""
    rng = np.random.default_rng(cfg.init_seed)
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=cfg.dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(1.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(cfg.dtype)
    return params


def zero_params(cfg):
    return {k: np.zeros(s, dtype=cfg.dtype) for k, s in cfg.param_shapes().items()}


@dataclass
class ForwardCache:
    params: dict  # the exact arrays used, for staleness checks
    branch_caches: dict = field(default_factory=dict)
    head_cache: object = None
    squeeze: bool = False


def _branch_forward(params, br, x):
    caches = []
    h = x
    for i in range(NUM_BLOCKS):
        h, c_conv = tc.conv3d_forward(h, params[f"{br}.conv{i}.weight"], params[f"{br}.conv{i}.bias"])
        h, c_relu = tc.relu_forward(h)
        h, c_pool = tc.maxpool3d_forward(h)
        caches.append((c_conv, c_relu, c_pool))
    pooled_shape = h.shape
    flat = h.reshape(h.shape[0], -1)
    feat, c_fc = tc.linear_forward(flat, params[f"{br}.fc.weight"], params[f"{br}.fc.bias"])
    feat, c_frelu = tc.relu_forward(feat)
    return feat, (caches, pooled_shape, c_fc, c_frelu)


def _check_input(params, x, name, channels_key):
    w = params[channels_key]
    if x.ndim != 5 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"{name} input shape {x.shape[1:]} incompatible with {w.shape[1]} input channels")


def forward(params, rgb, flow):
    """Logits for one sample ``(C, T, H, W)`` pair or a batch ``(N, C, T, H, W)``.

    Returns ``(logits, cache)`` with logits of shape ``(2,)`` or ``(N, 2)``.
    """
    rgb = np.asarray(rgb)
    flow = np.asarray(flow)
    squeeze = rgb.ndim == 4
    if squeeze:
        rgb, flow = rgb[None], flow[None]
    if rgb.ndim != 5 or flow.ndim != 5 or rgb.shape[0] != flow.shape[0]:
        raise ShapeError(f"rgb {rgb.shape} and flow {flow.shape} must be matching (N, C, T, H, W) batches")
    _check_input(params, rgb, "rgb", "rgb.conv0.weight")
    _check_input(params, flow, "flow", "flow.conv0.weight")

    cache = ForwardCache(params=dict(params), squeeze=squeeze)
    feats = []
    for br, x in zip(BRANCHES, (rgb, flow)):
        try:
            feat, cache.branch_caches[br] = _branch_forward(params, br, x)
        except ShapeError as exc:
            raise ShapeError(f"{br} branch: {exc}") from None
        feats.append(feat)
    fused = np.concatenate(feats, axis=1)
    logits, cache.head_cache = tc.linear_forward(fused, params["head.weight"], params["head.bias"])
    return (logits[0] if squeeze else logits), cache


def backward(params, cache, grad_logits):
    """Parameter gradients (summed over a batch) given d loss / d logits."""
    if set(params) != set(cache.params) or any(params[k] is not cache.params[k] for k in params):
        raise ValueError("forward cache does not belong to these parameters (stale or mismatched)")
    g = np.asarray(grad_logits)
    if cache.squeeze:
        g = g[None]
    grads = {}
    g_fused, grads["head.weight"], grads["head.bias"] = tc.linear_backward(cache.head_cache, g)
    feature_dim = params["rgb.fc.bias"].shape[0]
    for k, br in enumerate(BRANCHES):
        caches, pooled_shape, c_fc, c_frelu = cache.branch_caches[br]
        g_feat = tc.relu_backward(c_frelu, g_fused[:, k * feature_dim:(k + 1) * feature_dim])
        g_flat, grads[f"{br}.fc.weight"], grads[f"{br}.fc.bias"] = tc.linear_backward(c_fc, g_feat)
        h = g_flat.reshape(pooled_shape)
        for i in reversed(range(NUM_BLOCKS)):
            c_conv, c_relu, c_pool = caches[i]
            h = tc.maxpool3d_backward(c_pool, h)
            h = tc.relu_backward(c_relu, h)
            h, grads[f"{br}.conv{i}.weight"], grads[f"{br}.conv{i}.bias"] = tc.conv3d_backward(c_conv, h)
    return {k: grads[k] for k in params}


def predict_proba(params, rgb, flow):
    """``(p_nonstroke, p_stroke)`` per sample (array of shape (..., 2))."""
    logits, _ = forward(params, rgb, flow)
    return tc.softmax(logits)
