"""Fused differentiable building blocks: convolution, normalisation, activations.

Each op computes its forward pass in numpy and supplies a hand-derived
backward closure, which keeps the recorded graph short.  Sequences use the
``[..., L, C]`` layout (time before channels).
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError, DimensionError
from .tensor import Tensor, _rowwise_matmul, _sigmoid, as_tensor, row_stable_enabled

GELU_COEF = 0.044715
SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))
PADDING_MODES = ("same", "causal")


def _pad_amounts(kernel_size: int, dilation: int, padding: str) -> tuple[int, int]:
    if kernel_size % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {kernel_size}")
    if dilation < 1:
        raise ConfigurationError(f"dilation must be >= 1, got {dilation}")
    span = (kernel_size - 1) * dilation
    if padding == "same":
        return span // 2, span // 2
    if padding == "causal":
        return span, 0
    raise ConfigurationError(f"unknown padding mode {padding!r}; expected one of {PADDING_MODES}")


def _pad_time(x: np.ndarray, left: int, right: int) -> np.ndarray:
    if left == 0 and right == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[-2] = (left, right)
    return np.pad(x, widths)


def conv1d(x, kernel, bias=None, dilation: int = 1, padding: str = "same") -> Tensor:
    """Dilated 1-D convolution over time.

    ``x`` is ``[..., L, Cin]`` and ``kernel`` is ``[k, Cin, Cout]``; the output
    keeps length ``L``.  ``same`` pads ``(k-1)*dilation/2`` zeros on both sides,
    ``causal`` pads ``(k-1)*dilation`` zeros on the left only.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    k, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise DimensionError(f"conv1d expects {cin} input channels, got input shape {x.shape}")
    left, right = _pad_amounts(k, dilation, padding)
    length = x.shape[-2]
    xp = _pad_time(x.data, left, right)
    # im2col: taps side by side on the channel axis
    cols = np.concatenate([xp[..., j * dilation : j * dilation + length, :] for j in range(k)], axis=-1)
    wmat = kernel.data.reshape(k * cin, cout)
    out = _rowwise_matmul(cols, wmat) if row_stable_enabled() else cols @ wmat
    parents = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, kernel, bias)

    def backward(g):
        gx = gk = None
        if x.requires_grad:
            gcols = g @ wmat.T
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j * dilation : j * dilation + length, :] += gcols[..., j * cin : (j + 1) * cin]
            gx = gxp[..., left : left + length, :]
        if kernel.requires_grad:
            gk = (cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(k, cin, cout)
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0) if bias.requires_grad else None)
        return grads

    return Tensor._from_op(out, parents, backward, "conv1d")


def depthwise_conv1d(x, kernel, bias=None, dilation: int = 1, padding: str = "causal") -> Tensor:
    """Per-channel 1-D convolution: ``x`` is ``[..., L, C]``, ``kernel`` is ``[k, C]``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    k, channels = kernel.shape
    if x.shape[-1] != channels:
        raise DimensionError(f"depthwise conv expects {channels} channels, got input shape {x.shape}")
    left, right = _pad_amounts(k, dilation, padding)
    length = x.shape[-2]
    xp = _pad_time(x.data, left, right)
    out = np.zeros(x.shape)
    for j in range(k):
        out = out + xp[..., j * dilation : j * dilation + length, :] * kernel.data[j]
    parents = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, kernel, bias)

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.empty(kernel.shape)
        flat_g = g.reshape(-1, channels)
        for j in range(k):
            window = xp[..., j * dilation : j * dilation + length, :]
            gxp[..., j * dilation : j * dilation + length, :] += g * kernel.data[j]
            gk[j] = (window.reshape(-1, channels) * flat_g).sum(axis=0)
        grads = [gxp[..., left : left + length, :], gk]
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return grads

    return Tensor._from_op(out, parents, backward, "depthwise_conv1d")


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward, "log_softmax")


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return Tensor._from_op(x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),), "silu")


def gelu(x) -> Tensor:
    """GELU, tanh approximation: ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    x = as_tensor(x)
    v = x.data
    t = np.tanh(SQRT_2_OVER_PI * (v + GELU_COEF * v * v * v))
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return Tensor._from_op(out, (x,), backward, "gelu")


def activation(x, kind: str) -> Tensor:
    if kind == "silu":
        return silu(x)
    if kind == "gelu":
        return gelu(x)
    raise ConfigurationError(f"unknown activation {kind!r}; expected 'silu' or 'gelu'")


def relu(x) -> Tensor:
    x = as_tensor(x)
    keep = x.data > 0
    return Tensor._from_op(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,), "relu")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise each frame over its channels (last axis)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, g.shape[-1])
        return gx, (flat * xhat.reshape(flat.shape)).sum(axis=0), flat.sum(axis=0)

    return Tensor._from_op(out, (x, gamma, beta), backward, "layer_norm")


def instance_norm(x, gamma, beta, eps: float = 1e-5, mask: np.ndarray | None = None, causal: bool = False) -> Tensor:
    """Normalise every channel over the time axis (``-2``) of each sequence.

    ``mask`` (shape ``x.shape[:-1]``) marks valid frames: statistics use valid
    frames only and padded frames come out as zero.  With ``causal=True`` the
    statistics at frame ``t`` cover frames ``<= t`` only.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if mask is None:
        m = np.ones(x.shape[:-1] + (1,))
    else:
        m = np.asarray(mask, dtype=np.float64).reshape(x.shape[:-1] + (1,))
    xv = x.data * m
    if causal:
        n = np.maximum(np.cumsum(m, axis=-2), 1.0)
        mu = np.cumsum(xv, axis=-2) / n
        var = np.maximum(np.cumsum(xv * x.data, axis=-2) / n - mu * mu, 0.0)
    else:
        n = np.maximum(m.sum(axis=-2, keepdims=True), 1.0)
        mu = xv.sum(axis=-2, keepdims=True) / n
        var = (m * (x.data - mu) ** 2).sum(axis=-2, keepdims=True) / n
    sigma = np.sqrt(var + eps)
    xhat = (x.data - mu) / sigma * m
    out = (xhat * gamma.data + beta.data) * m

    def backward(g):
        g = g * m
        gxhat = g * gamma.data
        if causal:
            a = gxhat / (n * sigma)
            b = gxhat * xhat / (n * sigma * sigma)
            rev_a = np.flip(np.cumsum(np.flip(a, -2), axis=-2), -2)
            rev_b = np.flip(np.cumsum(np.flip(b, -2), axis=-2), -2)
            rev_bmu = np.flip(np.cumsum(np.flip(b * mu, -2), axis=-2), -2)
            gx = gxhat / sigma - m * rev_a - m * (x.data * rev_b - rev_bmu)
        else:
            mean_g = gxhat.sum(axis=-2, keepdims=True) / n
            mean_gx = (gxhat * xhat).sum(axis=-2, keepdims=True) / n
            gx = m * (gxhat - mean_g - xhat * mean_gx) / sigma
        flat = g.reshape(-1, g.shape[-1])
        return gx, (flat * xhat.reshape(flat.shape)).sum(axis=0), flat.sum(axis=0)

    return Tensor._from_op(out, (x, gamma, beta), backward, "instance_norm")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` as a single op; ``weight`` is ``[in, out]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear expects {weight.shape[0]} input features, got input shape {x.shape}")
    flat = x.data.reshape(-1, weight.shape[0])
    out = _rowwise_matmul(flat, weight.data) if row_stable_enabled() else flat @ weight.data
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)
    out = out.reshape(x.shape[:-1] + (weight.shape[1],))

    def backward(g):
        gflat = g.reshape(-1, weight.shape[1])
        gx = (gflat @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = flat.T @ gflat if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(gflat.sum(axis=0))
        return grads

    return Tensor._from_op(out, parents, backward, "linear")


__all__ = [
    "activation",
    "conv1d",
    "depthwise_conv1d",
    "dropout",
    "gelu",
    "instance_norm",
    "layer_norm",
    "linear",
    "log_softmax",
    "relu",
    "silu",
    "softmax",
]
