"""The multi-stage network built from LSTContext blocks."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import functional as F
from .exceptions import ConfigurationError, DataError, DimensionError
from .nn import Conv1d, Linear, Module
from .sampling import longrange_index, window_index
from .srtm import BRANCH_MODES, SRTM, SrtmConfig
from .tensor import Tensor, as_tensor, no_grad, row_stable, take

CONV_MODES = ("dilated", "plain", "none")
SAMPLING_MODES = ("both", "window", "longrange")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 2048
    stage1_dim: int = 64
    refine_dim: int = 32
    layers_per_stage: int = 10
    stages: int = 4
    num_classes: int = 8
    window: int = 64
    stride: int = 64
    state_dim: int = 16
    expand: int = 2
    dropout: float = 0.1
    causal: bool = False
    dim_reduction: bool = True
    branches: str = "full"
    conv_mode: str = "dilated"
    sampling: str = "both"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("input_dim", "stage1_dim", "refine_dim", "layers_per_stage", "stages",
                     "num_classes", "window", "stride", "state_dim", "expand"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("stage1_dim", "refine_dim"):
            if getattr(self, name) % 4:
                raise ConfigurationError(f"{name} must be divisible by 4, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.branches not in BRANCH_MODES:
            raise ConfigurationError(f"branches must be one of {BRANCH_MODES}")
        if self.conv_mode not in CONV_MODES:
            raise ConfigurationError(f"conv_mode must be one of {CONV_MODES}")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigurationError(f"sampling must be one of {SAMPLING_MODES}")

    @property
    def head_dim(self) -> int:
        return self.refine_dim if self.dim_reduction else self.stage1_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {unknown}")
        return cls(**values)

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


@dataclass
class StageOutput:
    logits: Tensor
    probs: Tensor
    log_probs: Tensor


def _gather_mask(mask: np.ndarray, index: np.ndarray) -> np.ndarray:
    return (index >= 0) & mask[np.where(index >= 0, index, 0)]


class LSTContextBlock(Module):
    """Dilated conv -> GELU -> windowed SRTM -> strided SRTM -> linear, plus residual."""

    def __init__(self, channels: int, layer_index: int, config: ModelConfig, rng: np.random.Generator,
                 cross_dim: int | None = None):
        if layer_index < 0:
            raise ConfigurationError(f"layer index must be >= 0, got {layer_index}")
        self.channels = channels
        self.window = config.window
        self.stride = config.stride
        self.sampling = config.sampling
        self.dilation = 2**layer_index if config.conv_mode == "dilated" else 1
        padding = "causal" if config.causal else "same"
        self.conv = (Conv1d(channels, channels, 3, rng, dilation=self.dilation, padding=padding)
                     if config.conv_mode != "none" else None)
        srtm_cfg = SrtmConfig(channels=channels, expand=config.expand, state_dim=config.state_dim,
                              dropout=config.dropout, branches=config.branches, causal=config.causal,
                              cross_dim=cross_dim)
        self.local = SRTM(srtm_cfg, rng)
        self.global_ = SRTM(srtm_cfg, rng)
        self.out_proj = Linear(channels, channels, rng)

    def _sampled(self, block: SRTM, x: Tensor, mask: np.ndarray, index: np.ndarray, qk_source):
        length = x.shape[-2]
        parts = take(x, index, axis=-2)
        src = take(qk_source, index, axis=-2) if qk_source is not None else None
        out = block(parts, _gather_mask(mask, index), src)
        flat = index.reshape(-1)
        position = np.empty(length, dtype=np.int64)
        position[flat[flat >= 0]] = np.nonzero(flat >= 0)[0]
        return take(out.reshape((index.size, out.shape[-1])), position, axis=-2)

    def forward(self, x, mask=None, qk_source=None):
        x = as_tensor(x)
        length = x.shape[-2]
        mask = np.ones(length, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if not mask.all():
            x = x * mask[:, None].astype(np.float64)  # pad content must not reach the convolution
        h = F.gelu(self.conv(x)) if self.conv is not None else x
        win = window_index(length, self.window)
        strided = longrange_index(length, min(self.stride, length))
        first, second = {"both": (win, strided), "window": (win, win), "longrange": (strided, strided)}[self.sampling]
        h = self._sampled(self.local, h, mask, first, qk_source)
        h = self._sampled(self.global_, h, mask, second, qk_source)
        out = x + self.out_proj(h)
        return out * mask[:, None].astype(np.float64)


class Stage(Module):
    def __init__(self, in_dim: int, width: int, out_width: int, config: ModelConfig,
                 rng: np.random.Generator, cross_dim: int | None):
        self.in_proj = Linear(in_dim, width, rng)
        self.blocks = [LSTContextBlock(width, i, config, rng, cross_dim) for i in range(config.layers_per_stage)]
        self.reduce = Linear(width, out_width, rng) if out_width != width else None
        self.head = Linear(out_width, config.num_classes, rng)
        self.cross = cross_dim is not None

    def forward(self, x, mask, qk_source=None) -> StageOutput:
        h = self.in_proj(x)
        for block in self.blocks:
            h = block(h, mask, qk_source if self.cross else None)
        if self.reduce is not None:
            h = self.reduce(h)
        logits = self.head(h)
        return StageOutput(logits, F.softmax(logits, axis=-1), F.log_softmax(logits, axis=-1))


class SPRMamba(Module):
    """Stage 1 maps features to class probabilities; later stages refine them.

    Refinement stages embed the previous stage's probabilities and use them
    as attention queries and keys (cross-attention).
    """

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        c1, ch = config.stage1_dim, config.head_dim
        self.stages = [Stage(config.input_dim, c1, ch, config, rng, cross_dim=None)]
        for _ in range(config.stages - 1):
            self.stages.append(Stage(config.num_classes, ch, ch, config, rng, cross_dim=config.num_classes))

    def forward(self, features, mask=None) -> list[StageOutput]:
        features = as_tensor(features)
        if features.ndim != 2 or features.shape[1] != self.config.input_dim:
            raise DimensionError(f"expected features of shape [L, {self.config.input_dim}], got {features.shape}")
        if features.shape[0] < 1:
            raise DataError("empty feature sequence")
        if not np.all(np.isfinite(features.data)):
            raise DataError("features contain NaN or Inf")
        mask = np.ones(features.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        with row_stable(self.config.causal):
            outputs = [self.stages[0](features, mask)]
            for stage in self.stages[1:]:
                prev = outputs[-1].probs
                outputs.append(stage(prev, mask, qk_source=prev))
        return outputs

    def predict_proba(self, features) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                return self.forward(features)[-1].probs.data
        finally:
            self.train(was_training)


def build_model(config: ModelConfig) -> SPRMamba:
    return SPRMamba(config)


def param_count(model: Module) -> int:
    """Number of learnable scalars."""
    return model.num_parameters()
