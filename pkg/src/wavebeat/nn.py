"""Differentiable 1-D operators with hand-written backward passes.

Tensors are plain numpy arrays laid out as (batch, channels, time). Forward
functions return ``(out, cache)``; the matching backward takes the upstream
gradient and that cache. Reductions accumulate in float64 and results are
cast back to the input dtype, so float32 storage stays cheap while float64
inputs give gradcheck-quality numerics.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

F64 = np.float64


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = None
    trainable: bool = True

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0


# -- convolution ---------------------------------------------------------------

def conv1d_output_length(length: int, kernel_size: int, stride: int = 1,
                         dilation: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - dilation * (kernel_size - 1) - 1) // stride + 1


def _active_taps(length, kernel_size, stride, dilation, padding, t_out):
    """Taps whose strided input slice touches at least one real sample."""
    last = stride * (t_out - 1)
    return [k for k in range(kernel_size)
            if k * dilation + last >= padding and k * dilation < padding + length]


COLUMN_BLOCK = 1 << 22  # elements of one im2col block


def _columns(xp, taps, stride, dilation, t0, t1):
    """im2col block of shape (C_in * len(taps), B * (t1 - t0)) for output frames [t0, t1)."""
    batch, c_in, _ = xp.shape
    n = t1 - t0
    cols = np.empty((c_in, len(taps), batch, n), dtype=xp.dtype)
    for j, k in enumerate(taps):
        start = t0 * stride + k * dilation
        cols[:, j] = xp[:, :, start:start + stride * (n - 1) + 1:stride].transpose(1, 0, 2)
    return cols.reshape(c_in * len(taps), batch * n)


def _time_blocks(batch, rows, t_out):
    step = max(1, COLUMN_BLOCK // max(1, batch * rows))
    for t0 in range(0, t_out, step):
        yield t0, min(t0 + step, t_out)


def conv1d_forward(x, weight, bias, stride=1, dilation=1, padding=0):
    """``out[b,o,t] = bias[o] + sum_{i,k} w[o,i,k] * x[b,i,t*stride + k*dilation - padding]``."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"expected 3-d input and weight, got {x.shape} and {weight.shape}")
    batch, c_in, length = x.shape
    c_out, c_in_w, kernel_size = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"input has {c_in} channels, weight expects {c_in_w}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} does not match {c_out} output channels")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("need stride >= 1, dilation >= 1, padding >= 0")
    if length + 2 * padding < dilation * (kernel_size - 1) + 1:
        raise ValueError("input shorter than the dilated kernel")

    t_out = conv1d_output_length(length, kernel_size, stride, dilation, padding)
    taps = _active_taps(length, kernel_size, stride, dilation, padding, t_out)
    xp = np.pad(x.astype(F64, copy=False), ((0, 0), (0, 0), (padding, padding)))
    w = weight.astype(F64, copy=False)[:, :, taps].reshape(c_out, -1)
    out = np.empty((batch, c_out, t_out), dtype=x.dtype)
    for t0, t1 in _time_blocks(batch, w.shape[1], t_out):
        block = (w @ _columns(xp, taps, stride, dilation, t0, t1)).reshape(c_out, batch, t1 - t0)
        if bias is not None:
            block += bias.astype(F64)[:, None, None]
        out[:, :, t0:t1] = block.transpose(1, 0, 2)
    cache = (x, weight, bias is not None, stride, dilation, padding)
    return out, cache


def conv1d_backward(grad_out, cache):
    """Returns ``(grad_input, grad_weight, grad_bias)``; ``grad_bias`` is None without bias."""
    x, weight, has_bias, stride, dilation, padding = cache
    batch, c_in, length = x.shape
    c_out, _, kernel_size = weight.shape
    t_out = grad_out.shape[2]
    if grad_out.shape != (batch, c_out, t_out) or \
            t_out != conv1d_output_length(length, kernel_size, stride, dilation, padding):
        raise ValueError(f"grad_out shape {grad_out.shape} inconsistent with forward call")

    taps = _active_taps(length, kernel_size, stride, dilation, padding, t_out)
    xp = np.pad(x.astype(F64, copy=False), ((0, 0), (0, 0), (padding, padding)))
    w = weight.astype(F64, copy=False)[:, :, taps].reshape(c_out, -1)
    gxp = np.zeros_like(xp)
    gw = np.zeros((c_out, c_in * len(taps)), dtype=F64)
    for t0, t1 in _time_blocks(batch, w.shape[1], t_out):
        n = t1 - t0
        g = grad_out[:, :, t0:t1].astype(F64).transpose(1, 0, 2).reshape(c_out, batch * n)
        gw += g @ _columns(xp, taps, stride, dilation, t0, t1).T
        gcols = (w.T @ g).reshape(c_in, len(taps), batch, n)
        for j, k in enumerate(taps):
            start = t0 * stride + k * dilation
            gxp[:, :, start:start + stride * (n - 1) + 1:stride] += gcols[:, j].transpose(1, 0, 2)
    gw_full = np.zeros(weight.shape, dtype=F64)
    gw_full[:, :, taps] = gw.reshape(c_out, c_in, len(taps))
    gx = gxp[:, :, padding:padding + length]
    gb = grad_out.astype(F64).sum(axis=(0, 2)).astype(weight.dtype) if has_bias else None
    return gx.astype(x.dtype), gw_full.astype(weight.dtype), gb


# -- normalisation and activations ----------------------------------------------

def batchnorm1d_forward(x, gamma, beta, running_mean=None, running_var=None,
                        training=True, momentum=0.1, eps=1e-5):
    """Per-channel normalisation over the batch and time axes.

    In training mode ``running_mean``/``running_var`` (if given) are updated in
    place by an exponential moving average, the variance estimate being the
    unbiased one. Eval mode requires both to be present.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if training:
        xf = x.astype(F64, copy=False)
        mean = xf.mean(axis=(0, 2))
        var = xf.var(axis=(0, 2))
        n = x.shape[0] * x.shape[2]
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var * n / max(n - 1, 1)
    else:
        if running_mean is None or running_var is None:
            raise RuntimeError("batchnorm in eval mode needs initialised running statistics")
        mean = running_mean.astype(F64)
        var = running_var.astype(F64)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma.astype(F64)[None, :, None] * xhat + beta.astype(F64)[None, :, None]
    cache = (xhat, inv_std, gamma, training)
    return out.astype(x.dtype, copy=False), cache


def batchnorm1d_backward(grad_out, cache):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, training = cache
    g = grad_out.astype(F64, copy=False)
    g_gamma = (g * xhat).sum(axis=(0, 2))
    g_beta = g.sum(axis=(0, 2))
    g_xhat = g * gamma.astype(F64)[None, :, None]
    if training:
        n = g.shape[0] * g.shape[2]
        gx = (inv_std[None, :, None] / n) * (
            n * g_xhat
            - g_xhat.sum(axis=(0, 2))[None, :, None]
            - xhat * (g_xhat * xhat).sum(axis=(0, 2))[None, :, None])
    else:
        gx = g_xhat * inv_std[None, :, None]
    return gx.astype(grad_out.dtype), g_gamma.astype(gamma.dtype), g_beta.astype(gamma.dtype)


def _channel_view(alpha, ndim):
    shape = [1] * ndim
    shape[1] = -1
    return alpha.reshape(shape)


def prelu_forward(x, alpha):
    """Per-channel leaky slope on the non-positive side (channel axis 1)."""
    if x.ndim < 2 or alpha.shape != (x.shape[1],):
        raise ValueError(f"alpha shape {alpha.shape} must have one entry per channel of {x.shape}")
    a = _channel_view(alpha, x.ndim)
    pos = x > 0
    out = np.where(pos, x, a * x).astype(x.dtype, copy=False)
    return out, (x, alpha, pos)


def prelu_backward(grad_out, cache):
    """Returns ``(grad_input, grad_alpha)``; at zero the identity branch is used."""
    x, alpha, pos = cache
    a = _channel_view(alpha, x.ndim)
    gx = np.where(pos, grad_out, a * grad_out)
    axes = tuple(i for i in range(x.ndim) if i != 1)
    ga = np.where(pos, 0.0, x.astype(F64) * grad_out).sum(axis=axes)
    return gx.astype(grad_out.dtype), ga.astype(alpha.dtype)


def sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.result_type(x, np.float32), copy=False)


def sigmoid_forward(x):
    out = sigmoid(x)
    return out, out


def sigmoid_backward(grad_out, out):
    return grad_out * out * (1.0 - out)


# -- optimisation ----------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on the trainable ``params``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in params:
        if not p.trainable:
            continue
        g = p.grad.astype(F64)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros(p.value.shape, dtype=F64)
            state.v[p.name] = np.zeros(p.value.shape, dtype=F64)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.value[...] = (p.value.astype(F64) - update).astype(p.value.dtype)
    return state


def grad_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(p.grad.astype(F64) ** 2)) for p in params if p.trainable))


def clip_grad_norm(params, max_norm: float = 4.0) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the factor applied (1.0 when no clipping happened).
    """
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    params = [p for p in params if p.trainable]
    norm = grad_norm(params)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for p in params:
        p.grad[...] = (p.grad.astype(F64) * scale).astype(p.grad.dtype)
    return scale


# -- serialisation -------------------------------------------------------------

CHECKPOINT_MAGIC = b"WBEATPAR"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_parameters(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays as little-endian float32 records."""
    with open(os.fspath(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            encoded = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def load_parameters(path) -> dict[str, np.ndarray]:
    with open(os.fspath(path), "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a parameter file")
    pos = len(CHECKPOINT_MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError(f"{path}: truncated")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 4 * n > len(blob):
            raise CheckpointError(f"{path}: truncated")
        out[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * n
    if pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes")
    return out
