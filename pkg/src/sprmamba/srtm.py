"""Scale Residual TranMamba block.

``F = beta * F_in + TranMamba(IN(F_in))`` followed by ``F_out = MLP(IN(F))``.
TranMamba splits channels into quarter/quarter/half branches: a SiLU gate, a
conv + selective-SSM + LayerNorm path, and scaled dot-product attention.
The gate and SSM paths are multiplied, the attention path is added, and a
final linear map returns to ``C`` channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .exceptions import ConfigurationError, DimensionError
from .nn import DepthwiseConv1d, Dropout, InstanceNorm, LayerNorm, Linear, Module, Parameter
from .ssm import SelectiveSSM
from .tensor import Tensor, as_tensor, row_stable_enabled, split

BRANCH_MODES = ("full", "attention", "ssm")


@dataclass(frozen=True)
class SrtmConfig:
    channels: int
    expand: int = 2
    state_dim: int = 16
    dropout: float = 0.1
    beta_init: float = 1.0
    heads: int = 1
    branches: str = "full"
    causal: bool = False
    cross_dim: int | None = None

    def __post_init__(self):
        if self.channels % 4 != 0 or self.channels <= 0:
            raise ConfigurationError(f"channels must be a positive multiple of 4, got {self.channels}")
        if self.expand < 1:
            raise ConfigurationError(f"expansion factor must be >= 1, got {self.expand}")
        if self.heads != 1:
            raise ConfigurationError("only single-head attention is supported")
        if self.branches not in BRANCH_MODES:
            raise ConfigurationError(f"branches must be one of {BRANCH_MODES}, got {self.branches!r}")

    @property
    def attention_dim(self) -> int:
        return self.channels // 2

    @property
    def inner(self) -> int:
        return self.expand * self.channels


def split_branches(x, channels: int):
    """Split ``[..., C]`` into the ``C/4``, ``C/4`` and ``C/2`` branch inputs."""
    if x.shape[-1] != channels:
        raise DimensionError(f"expected {channels} channels, got shape {x.shape}")
    q = channels // 4
    return split(as_tensor(x), [q, q, channels - 2 * q], axis=-1)


def _allowed(mask, causal: bool, tq: int, tk: int, lead: tuple[int, ...]) -> np.ndarray:
    allowed = np.ones(lead + (tq, tk), dtype=bool)
    if mask is not None:
        allowed &= np.asarray(mask, dtype=bool).reshape(lead + (1, tk))
    if causal:
        allowed &= np.tril(np.ones((tq, tk), dtype=bool))
    return allowed


def attention(q, k, v, mask=None, causal: bool = False, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d)) V`` with masked (and optionally future) keys excluded.

    ``q``/``k`` are ``[..., T, d]``, ``v`` is ``[..., T, dv]`` and ``mask`` is
    ``[..., T]`` over keys.  A query with no admissible key returns zeros.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if d == 0:
        raise ConfigurationError("attention dimension must be positive")
    if k.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"incompatible attention shapes q={q.shape} k={k.shape} v={v.shape}")
    scale = 1.0 / np.sqrt(d)
    tq, tk = q.shape[-2], k.shape[-2]
    lead = q.shape[:-2]
    allowed = _allowed(mask, causal, tq, tk, lead)
    stable = causal and row_stable_enabled()

    if stable:
        logits = np.einsum("...td,...sd->...ts", q.data, k.data) * scale
    else:
        logits = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    row_max = np.max(logits, axis=-1, keepdims=True, where=allowed, initial=-np.inf)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(allowed, np.exp(np.where(allowed, logits - row_max, 0.0)), 0.0)
    if stable:
        # running sums along keys, read at the query's own position: exact under truncation
        diag = np.arange(tq)
        totals = np.cumsum(e, axis=-1)[..., diag, diag][..., None]
        weighted = np.cumsum(e[..., :, :, None] * v.data[..., None, :, :], axis=-2)
        numer = weighted[..., diag, diag, :]
    else:
        totals = e.sum(axis=-1, keepdims=True)
    safe = np.where(totals > 0, totals, 1.0)
    weights = e / safe
    out = numer / safe if stable else weights @ v.data

    def backward(g):
        gv = np.swapaxes(weights, -1, -2) @ g
        gw = g @ np.swapaxes(v.data, -1, -2)
        gs = weights * (gw - (gw * weights).sum(axis=-1, keepdims=True)) * scale
        return gs @ k.data, np.swapaxes(gs, -1, -2) @ q.data, gv

    result = Tensor._from_op(out, (q, k, v), backward, "attention")
    if return_weights:
        return result, weights
    return result


class TranMamba(Module):
    def __init__(self, config: SrtmConfig, rng: np.random.Generator):
        self.config = config
        c, inner, d = config.channels, config.inner, config.attention_dim
        mode = config.branches
        self.gate_proj = self.ssm_proj = self.conv = self.ssm = self.ssm_norm = None
        self.q_proj = self.k_proj = self.v_proj = self.attn_out = None
        if mode in ("full", "ssm"):
            width = c // 4 if mode == "full" else c
            self.gate_proj = Linear(width, inner, rng)
            self.ssm_proj = Linear(width, inner, rng)
            self.conv = DepthwiseConv1d(inner, 3, rng, padding="causal")
            self.ssm = SelectiveSSM(inner, config.state_dim, rng)
            self.ssm_norm = LayerNorm(inner)
        if mode in ("full", "attention"):
            width = c // 2 if mode == "full" else c
            qk_width = config.cross_dim if config.cross_dim is not None else width
            self.q_proj = Linear(qk_width, d, rng)
            self.k_proj = Linear(qk_width, d, rng)
            self.v_proj = Linear(width, d, rng)
            self.attn_out = Linear(d, inner, rng)
        self.dropout = Dropout(config.dropout, rng)
        self.out_proj = Linear(inner, c, rng)

    def forward(self, x, mask=None, qk_source=None):
        cfg = self.config
        if cfg.cross_dim is not None and qk_source is None and self.q_proj is not None:
            raise ConfigurationError("cross-attention block needs a query/key source")
        if cfg.branches == "full":
            b1, b2, b3 = split_branches(x, cfg.channels)
        else:
            if x.shape[-1] != cfg.channels:
                raise DimensionError(f"expected {cfg.channels} channels, got shape {x.shape}")
            b1 = b2 = b3 = x

        fused = None
        if self.ssm is not None:
            gate = F.silu(self.gate_proj(b1))
            long_term = self.ssm_norm(self.ssm(self.conv(self.ssm_proj(b2))))
            fused = gate * long_term
        if self.q_proj is not None:
            src = b3 if qk_source is None else qk_source
            ctx = attention(self.q_proj(src), self.k_proj(src), self.v_proj(b3), mask=mask, causal=cfg.causal)
            short_term = self.dropout(self.attn_out(F.gelu(ctx)))
            fused = short_term if fused is None else fused + short_term
        return self.out_proj(fused)


class SRTM(Module):
    def __init__(self, config: SrtmConfig, rng: np.random.Generator):
        self.config = config
        c = config.channels
        self.norm_in = InstanceNorm(c, causal=config.causal)
        self.tranmamba = TranMamba(config, rng)
        self.beta = Parameter(np.array(config.beta_init))
        self.norm_mid = InstanceNorm(c, causal=config.causal)
        self.mlp_in = Linear(c, 2 * c, rng)
        self.mlp_out = Linear(2 * c, c, rng)

    def forward(self, x, mask=None, qk_source=None):
        x = as_tensor(x)
        fused = self.beta * x + self.tranmamba(self.norm_in(x, mask), mask, qk_source)
        return self.mlp_out(F.gelu(self.mlp_in(self.norm_mid(fused, mask))))
