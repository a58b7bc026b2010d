"""Diagonal state-space layers.

The LTI helpers (:func:`discretize_zoh`, :func:`ssm_recurrence`,
:func:`ssm_conv_kernel`) operate on plain numpy arrays and serve as the
reference path.  The trainable path is :func:`selective_scan`, where the
step size and the input/output projections vary per time step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import DimensionError, DomainError
from .nn import Linear, Module, Parameter
from .tensor import Tensor, as_tensor, softplus

SERIES_THRESHOLD = 1e-8


@dataclass
class SsmParams:
    """Continuous diagonal SSM for a single channel.

    ``log_a`` parameterises the evolution diagonal as ``A = -exp(log_a)`` so
    every eigenvalue is strictly negative.
    """

    log_a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    delta: float

    @classmethod
    def from_diagonal(cls, a, b, c, delta: float) -> "SsmParams":
        a = np.asarray(a, dtype=np.float64)
        if np.any(a >= 0):
            raise DomainError("diagonal A entries must be strictly negative")
        return cls(np.log(-a), np.asarray(b, dtype=np.float64), np.asarray(c, dtype=np.float64), delta)

    @property
    def a(self) -> np.ndarray:
        return -np.exp(np.asarray(self.log_a, dtype=np.float64))

    @property
    def state_dim(self) -> int:
        return int(np.size(self.log_a))


@dataclass
class DiscreteSsm:
    a_bar: np.ndarray
    b_bar: np.ndarray


def zoh_coefficients(a: np.ndarray, delta) -> tuple[np.ndarray, np.ndarray]:
    """Return ``exp(delta*a)`` and ``(exp(delta*a) - 1) / a`` elementwise.

    The second factor falls back to its series ``delta * (1 + delta*a/2)``
    when ``|delta*a| < 1e-8`` to avoid cancellation.
    """
    a = np.asarray(a, dtype=np.float64)
    da = delta * a
    a_bar = np.exp(da)
    small = np.abs(da) < SERIES_THRESHOLD
    safe_a = np.where(small, 1.0, a)
    scale = np.where(small, delta * (1.0 + 0.5 * da), np.expm1(da) / safe_a)
    return a_bar, scale


def discretize_zoh(params: SsmParams) -> DiscreteSsm:
    """Zero-order-hold discretisation of a diagonal SSM."""
    if not np.all(np.asarray(params.delta) > 0):
        raise DomainError(f"delta must be positive, got {params.delta}")
    a_bar, scale = zoh_coefficients(params.a, params.delta)
    return DiscreteSsm(a_bar=a_bar, b_bar=scale * np.asarray(params.b, dtype=np.float64))


def ssm_recurrence(disc: DiscreteSsm, c, x) -> np.ndarray:
    """Run ``h_t = A_bar h_{t-1} + B_bar x_t``, ``y_t = C h_t`` from ``h = 0``."""
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    h = np.zeros_like(disc.a_bar)
    y = np.empty(x.shape[0])
    for t, xt in enumerate(x):
        h = disc.a_bar * h + disc.b_bar * xt
        y[t] = c @ h
    return y


def ssm_conv_kernel(disc: DiscreteSsm, c, length: int) -> np.ndarray:
    """Kernel ``(C B_bar, C A_bar B_bar, ..., C A_bar^(M-1) B_bar)``."""
    if length < 1:
        raise DomainError(f"kernel length must be >= 1, got {length}")
    powers = disc.a_bar[None, :] ** np.arange(length)[:, None]
    return powers @ (np.asarray(c, dtype=np.float64) * disc.b_bar)


def apply_kernel(kernel, x) -> np.ndarray:
    """Causal convolution ``y_t = sum_{j<=t} kernel_j x_{t-j}``."""
    x = np.asarray(x, dtype=np.float64)
    return np.convolve(x, np.asarray(kernel, dtype=np.float64))[: x.shape[0]]


@numba.njit(cache=True)
def _zoh_scale(em1, dt, a):
    # (exp(dt*a) - 1) / a together with its partials in dt and a
    da = dt * a
    a_bar = em1 + 1.0
    if abs(da) < SERIES_THRESHOLD:
        return dt * (1.0 + 0.5 * da), 1.0 + da, 0.5 * dt * dt
    scale = em1 / a
    return scale, a_bar, (dt * a_bar - scale) / a


@numba.njit(cache=True)
def _scan_forward(u, delta, a, b, c):
    batch, length, channels = u.shape
    states = a.shape[1]
    y = np.empty((batch, length, channels))
    em1 = np.empty((batch, length, channels, states))
    hist = np.empty((batch, length, channels, states))
    for i in range(batch):
        h = np.zeros((channels, states))
        for t in range(length):
            for e in range(channels):
                dt = delta[i, t, e]
                ut = u[i, t, e]
                acc = 0.0
                for n in range(states):
                    m1 = math.expm1(dt * a[e, n])
                    scale, _, _ = _zoh_scale(m1, dt, a[e, n])
                    hn = (m1 + 1.0) * h[e, n] + scale * b[i, t, n] * ut
                    h[e, n] = hn
                    em1[i, t, e, n] = m1
                    hist[i, t, e, n] = hn
                    acc += c[i, t, n] * hn
                y[i, t, e] = acc
    return y, em1, hist


@numba.njit(cache=True)
def _scan_backward(u, delta, a, b, c, em1, hist, gy):
    batch, length, channels = u.shape
    states = a.shape[1]
    g_u = np.zeros_like(u)
    g_delta = np.zeros_like(delta)
    g_a = np.zeros_like(a)
    g_b = np.zeros_like(b)
    g_c = np.zeros_like(c)
    for i in range(batch):
        acc = np.zeros((channels, states))
        carry = np.zeros((channels, states))
        for t in range(length - 1, -1, -1):
            for e in range(channels):
                dt = delta[i, t, e]
                ut = u[i, t, e]
                gyt = gy[i, t, e]
                gu = 0.0
                gd = 0.0
                for n in range(states):
                    an = a[e, n]
                    m1 = em1[i, t, e, n]
                    a_bar = m1 + 1.0
                    scale, dscale_dt, dscale_da = _zoh_scale(m1, dt, an)
                    g = gyt * c[i, t, n] + carry[e, n] * acc[e, n]
                    acc[e, n] = g
                    carry[e, n] = a_bar
                    h_prev = hist[i, t - 1, e, n] if t > 0 else 0.0
                    g_c[i, t, n] += gyt * hist[i, t, e, n]
                    g_abar = g * h_prev
                    g_scale = g * b[i, t, n] * ut
                    gu += g * scale * b[i, t, n]
                    g_b[i, t, n] += g * scale * ut
                    gd += g_abar * an * a_bar + g_scale * dscale_dt
                    g_a[e, n] += g_abar * dt * a_bar + g_scale * dscale_da
                g_u[i, t, e] = gu
                g_delta[i, t, e] = gd
    return g_u, g_delta, g_a, g_b, g_c


def selective_scan(u, delta, a, b, c) -> Tensor:
    """Input-dependent diagonal SSM scan, per channel, causal in time.

    Shapes: ``u`` and ``delta`` are ``[..., L, E]``; ``a`` is ``[E, N]``;
    ``b`` and ``c`` are ``[..., L, N]`` and shared across channels.  Each step
    discretises with zero-order hold at its own ``delta``.
    """
    u, delta, a, b, c = (as_tensor(t) for t in (u, delta, a, b, c))
    lead = u.shape[:-2]
    length, channels = u.shape[-2:]
    states = a.shape[-1]
    if a.shape != (channels, states) or b.shape[-1] != states or c.shape[-1] != states:
        raise DimensionError(f"selective_scan shapes disagree: u={u.shape} a={a.shape} b={b.shape} c={c.shape}")

    def flat(x: np.ndarray, width: int) -> np.ndarray:
        return np.ascontiguousarray(np.broadcast_to(x, lead + (length, width)).reshape(-1, length, width))

    args = (flat(u.data, channels), flat(delta.data, channels), np.ascontiguousarray(a.data),
            flat(b.data, states), flat(c.data, states))
    y, em1, hist = _scan_forward(*args)
    y = y.reshape(u.shape)

    def backward(gy):
        g_u, g_delta, g_a, g_b, g_c = _scan_backward(*args, em1, hist, flat(gy, channels))
        return (g_u.reshape(u.shape), g_delta.reshape(u.shape), g_a,
                g_b.reshape(lead + (length, states)), g_c.reshape(lead + (length, states)))

    return Tensor._from_op(y, (u, delta, a, b, c), backward, "selective_scan")


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class SelectiveSSM(Module):
    """Selective SSM layer over ``[..., L, E]`` inputs.

    Per time step the input is projected to a low-rank step-size code and to
    shared ``B_t``/``C_t`` vectors; ``delta_t = softplus(dt_proj(code) + bias)``.
    """

    def __init__(self, channels: int, state_dim: int, rng: np.random.Generator,
                 dt_min: float = 0.01, dt_max: float = 0.1):
        self.channels = channels
        self.state_dim = state_dim
        self.dt_rank = max(1, -(-channels // 16))
        self.log_a = Parameter(np.log(np.tile(np.arange(1, state_dim + 1, dtype=np.float64), (channels, 1))))
        self.x_proj = Linear(channels, self.dt_rank + 2 * state_dim, rng, bias=False)
        self.dt_proj = Linear(self.dt_rank, channels, rng)
        dt0 = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=channels))
        self.dt_proj.bias.data = inverse_softplus(dt0)

    def forward(self, x):
        proj = self.x_proj(x)
        r, n = self.dt_rank, self.state_dim
        code = proj[..., :r]
        b = proj[..., r : r + n]
        c = proj[..., r + n :]
        delta = softplus(self.dt_proj(code))
        a = -self.log_a.exp()
        return selective_scan(x, delta, a, b, c)
