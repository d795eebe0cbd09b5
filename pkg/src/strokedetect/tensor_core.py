"""Dense kernels for the two-stream network and the optimizer step.

Tensors are plain numpy arrays (row-major, last axis fastest). Every
forward function returns ``(output, cache)`` and the matching backward
function consumes that cache. Spatio-temporal kernels accept a single
item ``(C, T, H, W)`` or a batch ``(N, C, T, H, W)``; batch gradients for
parameters are summed over the batch.

Reductions run in a fixed order so that results are bitwise reproducible.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

KERNEL = 3
PAD = 1


def _as_batch(x, ndim):
    x = np.asarray(x)
    if x.ndim == ndim:
        return x[None], True
    if x.ndim == ndim + 1:
        return x, False
    raise ShapeError(f"expected {ndim}-D input or a batch of them, got shape {x.shape}")


def _kernel_offsets():
    for dt in range(KERNEL):
        for dh in range(KERNEL):
            for dw in range(KERNEL):
                yield dt, dh, dw


# --- 3D convolution (3x3x3, stride 1, zero padding 1) ---------------------


@dataclass
class Conv3dCache:
    padded: np.ndarray
    weight: np.ndarray
    in_shape: tuple
    squeeze: bool


COLS_BUDGET = 32 * 2**20  # bytes of im2col scratch per chunk


def _t_chunks(c_in, t, h, w, itemsize):
    per_slice = c_in * KERNEL ** 3 * h * w * itemsize
    step = max(1, min(t, COLS_BUDGET // max(per_slice, 1)))
    return [(t0, min(t0 + step, t)) for t0 in range(0, t, step)]


def _im2col(padded_item, t0, t1, h, w):
    """Columns (C_in * 27, (t1 - t0) * H * W) for output slices t0..t1 of one item."""
    c_in = padded_item.shape[0]
    cols = np.empty((c_in, KERNEL ** 3, t1 - t0, h, w), dtype=padded_item.dtype)
    for k, (dt, dh, dw) in enumerate(_kernel_offsets()):
        cols[:, k] = padded_item[:, t0 + dt:t1 + dt, dh:dh + h, dw:dw + w]
    return cols.reshape(c_in * KERNEL ** 3, -1)


def conv3d_forward(x, weight, bias):
    """Same-size 3D convolution.

    ``out[n, o, t, h, w] = bias[o] + sum_{c, dt, dh, dw} x_pad[n, c, t+dt, h+dh, w+dw] * weight[o, c, dt, dh, dw]``
    """
    xb, squeeze = _as_batch(x, 4)
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if weight.ndim != 5 or weight.shape[2:] != (KERNEL,) * 3:
        raise ShapeError(f"conv weight must be C_out x C_in x 3 x 3 x 3, got {weight.shape}")
    n, c_in, t, h, w = xb.shape
    c_out = weight.shape[0]
    if weight.shape[1] != c_in:
        raise ShapeError(
            f"input has {c_in} channels but weight expects C_in={weight.shape[1]} "
            f"(input {xb.shape[1:]}, weight {weight.shape})"
        )
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")

    dtype = np.result_type(xb, weight)
    padded = np.pad(xb.astype(dtype, copy=False), ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD), (PAD, PAD)))
    w2 = weight.reshape(c_out, -1).astype(dtype, copy=False)
    out = np.empty((n, c_out, t, h, w), dtype=dtype)
    for i in range(n):
        for t0, t1 in _t_chunks(c_in, t, h, w, padded.itemsize):
            cols = _im2col(padded[i], t0, t1, h, w)
            out[i, :, t0:t1] = (w2 @ cols).reshape(c_out, t1 - t0, h, w)
    out += bias.reshape(1, c_out, 1, 1, 1)
    cache = Conv3dCache(padded, weight, xb.shape, squeeze)
    return (out[0] if squeeze else out), cache


def conv3d_backward(cache, grad_out):
    """Gradients of :func:`conv3d_forward` w.r.t. input, weight and bias."""
    gb, _ = _as_batch(grad_out, 4)
    n, c_in, t, h, w = cache.in_shape
    weight = cache.weight
    c_out = weight.shape[0]
    if gb.shape != (n, c_out, t, h, w):
        raise ShapeError(f"grad_out shape {gb.shape} != forward output {(n, c_out, t, h, w)}")

    dtype = np.result_type(gb, weight)
    w2 = weight.reshape(c_out, -1).astype(dtype, copy=False)
    grad_bias = gb.sum(axis=(0, 2, 3, 4))
    grad_w2 = np.zeros(w2.shape, dtype=dtype)
    grad_padded = np.zeros(cache.padded.shape, dtype=dtype)
    for i in range(n):
        for t0, t1 in _t_chunks(c_in, t, h, w, cache.padded.itemsize):
            cols = _im2col(cache.padded[i], t0, t1, h, w)
            g = gb[i, :, t0:t1].reshape(c_out, -1)
            grad_w2 += g @ cols.T
            gcols = (w2.T @ g).reshape(c_in, KERNEL ** 3, t1 - t0, h, w)
            for k, (dt, dh, dw) in enumerate(_kernel_offsets()):
                grad_padded[i, :, t0 + dt:t1 + dt, dh:dh + h, dw:dw + w] += gcols[:, k]
    grad_in = np.ascontiguousarray(grad_padded[:, :, PAD:PAD + t, PAD:PAD + h, PAD:PAD + w])
    if cache.squeeze:
        grad_in = grad_in[0]
    return grad_in, grad_w2.reshape(weight.shape), grad_bias


# --- 3D max pooling (2x2x2, stride 2, floor) ------------------------------


@dataclass
class MaxPoolCache:
    argmax: np.ndarray  # window offset 0..7 in (dt, dh, dw) scan order
    in_shape: tuple
    squeeze: bool


def pooled_extent(n):
    return n // 2


def maxpool3d_forward(x):
    """2x2x2 max pooling with stride 2; trailing odd slices are dropped."""
    xb, squeeze = _as_batch(x, 4)
    n, c, t, h, w = xb.shape
    t2, h2, w2 = t // 2, h // 2, w // 2
    if min(t2, h2, w2) == 0:
        raise ShapeError(f"pooling would produce an empty extent from (T, H, W)={(t, h, w)}")
    trimmed = xb[:, :, :2 * t2, :2 * h2, :2 * w2]
    windows = trimmed.reshape(n, c, t2, 2, h2, 2, w2, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    windows = windows.reshape(n, c, t2, h2, w2, 8)
    # np.argmax returns the first maximal index, i.e. first in scan order
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    cache = MaxPoolCache(argmax, xb.shape, squeeze)
    return (out[0] if squeeze else out), cache


def maxpool3d_backward(cache, grad_out):
    gb, _ = _as_batch(grad_out, 4)
    n, c, t, h, w = cache.in_shape
    t2, h2, w2 = t // 2, h // 2, w // 2
    if gb.shape != cache.argmax.shape:
        raise ShapeError(f"grad_out shape {gb.shape} != pooled shape {cache.argmax.shape}")
    onehot = cache.argmax[..., None] == np.arange(8)
    routed = np.where(onehot, gb[..., None], 0.0).astype(gb.dtype, copy=False)
    routed = routed.reshape(n, c, t2, h2, w2, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
    grad_in = np.zeros((n, c, t, h, w), dtype=gb.dtype)
    grad_in[:, :, :2 * t2, :2 * h2, :2 * w2] = routed.reshape(n, c, 2 * t2, 2 * h2, 2 * w2)
    return grad_in[0] if cache.squeeze else grad_in


# --- elementwise / affine -------------------------------------------------


def relu_forward(x):
    x = np.asarray(x)
    return np.maximum(x, 0), x


def relu_backward(cache, grad_out):
    """Gradient passes where the forward input was > 0; the subgradient at 0 is 0."""
    grad_out = np.asarray(grad_out)
    if grad_out.shape != cache.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {cache.shape}")
    return np.where(cache > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


@dataclass
class LinearCache:
    x: np.ndarray
    weight: np.ndarray
    squeeze: bool


def linear_forward(x, weight, bias):
    """``y = W x + b`` for a vector ``x`` or a batch of rows."""
    xb, squeeze = _as_batch(x, 1)
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if weight.ndim != 2 or weight.shape[1] != xb.shape[1]:
        raise ShapeError(f"weight {weight.shape} incompatible with input length {xb.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    y = xb @ weight.T + bias
    cache = LinearCache(xb, weight, squeeze)
    return (y[0] if squeeze else y), cache


def linear_backward(cache, grad_out):
    gb, _ = _as_batch(grad_out, 1)
    if gb.shape != (cache.x.shape[0], cache.weight.shape[0]):
        raise ShapeError(f"grad_out shape {gb.shape} does not match forward output")
    grad_x = gb @ cache.weight
    grad_w = gb.T @ cache.x
    grad_b = gb.sum(axis=0)
    return (grad_x[0] if cache.squeeze else grad_x), grad_w, grad_b


def softmax(logits):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Return ``(loss, grad_logits)``.

    For a 1-D ``logits`` and integer ``label`` the loss is a float. For a
    batch ``(N, K)`` with ``N`` labels, per-sample losses and gradients
    are returned (no averaging).
    """
    z = np.asarray(logits, dtype=float)
    labels = np.asarray(label)
    k = z.shape[-1]
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label {label!r} outside [0, {k})")
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    onehot = np.zeros_like(z)
    if z.ndim == 1:
        onehot[int(labels)] = 1.0
        loss = float(-log_probs[int(labels)])
    else:
        onehot[np.arange(z.shape[0]), labels] = 1.0
        loss = -log_probs[np.arange(z.shape[0]), labels]
    return loss, np.exp(log_probs) - onehot


# --- optimizer ------------------------------------------------------------


@dataclass
class OptimState:
    velocity: dict
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()}, 0)


def sgd_nesterov_step(params, grads, state, lr, momentum, weight_decay):
    """One SGD step with L2 weight decay and Nesterov momentum.

    With ``g' = g + wd * theta``: ``v <- mu * v + g'`` and
    ``theta <- theta - lr * (g' + mu * v)``.

    Pure: returns ``(new_params, new_state)`` and leaves inputs untouched.
    """
    if lr < 0 or momentum < 0 or weight_decay < 0:
        raise ValueError("lr, momentum and weight_decay must be >= 0")
    if set(params) != set(grads) or set(params) != set(state.velocity):
        raise ShapeError("params, grads and velocity must have identical keys")
    new_params, new_velocity = {}, {}
    for name, theta in params.items():
        g, v = grads[name], state.velocity[name]
        if g.shape != theta.shape or v.shape != theta.shape:
            raise ShapeError(
                f"{name}: param {theta.shape}, grad {g.shape}, velocity {v.shape}"
            )
        g = g + weight_decay * theta
        v = momentum * v + g
        new_params[name] = theta - lr * (g + momentum * v)
        new_velocity[name] = v
    return new_params, OptimState(new_velocity, state.step_count + 1)
