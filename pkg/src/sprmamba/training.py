"""Losses, AdamW, the warmup + cosine schedule and the training loop."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError, DataError, DimensionError, NumericalError, UsageError
from .model import ModelConfig, SPRMamba, StageOutput
from .nn import Module
from .tensor import Tensor, clamp_max, clamp_min, getitem, no_grad

logger = logging.getLogger(__name__)

LOG_FLOOR = math.log(1e-12)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 5e-4
    weight_decay: float = 1e-5
    warmup_epochs: int = 40
    total_epochs: int = 200
    smoothing_weight: float = 0.15
    smoothing_clip: float = 4.0
    min_lr_ratio: float = 0.01
    grad_clip: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigurationError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ConfigurationError("warmup_epochs must lie in [0, total_epochs]")
        if self.base_lr <= 0 or self.weight_decay < 0 or self.smoothing_weight < 0 or self.smoothing_clip <= 0:
            raise ConfigurationError("learning rate and clip must be positive; decay and smoothing weight non-negative")
        if not 0 < self.min_lr_ratio <= 1:
            raise ConfigurationError(f"min_lr_ratio must lie in (0, 1], got {self.min_lr_ratio}")
        if self.max_steps < 0:
            raise ConfigurationError("max_steps must be >= 0 (0 disables the step budget)")

    @property
    def min_lr(self) -> float:
        return self.base_lr * self.min_lr_ratio

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {unknown}")
        return cls(**values)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    total_loss: float
    stage_losses: list[float]
    train_acc: float
    val_acc: float | None = None


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def write_csv(self, path) -> None:
        stages = len(self.records[0].stage_losses) if self.records else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "lr", "total_loss", *[f"stage{i + 1}_loss" for i in range(stages)], "train_acc"])
            for r in self.records:
                writer.writerow([r.epoch, f"{r.lr:.8g}", f"{r.total_loss:.8g}",
                                 *[f"{v:.8g}" for v in r.stage_losses], f"{r.train_acc:.4f}"])


# -- losses -------------------------------------------------------------------
def _valid_mask(mask, length: int) -> np.ndarray:
    if mask is None:
        return np.ones(length, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (length,):
        raise DimensionError(f"mask shape {mask.shape} does not match {length} frames")
    return mask


def ce_loss(log_probs, labels, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``labels`` over valid frames.

    ``log_probs`` is ``[L, classes]``; log-probabilities below ``log(1e-12)``
    are clamped.  A fully masked sequence scores 0 (with a warning).
    """
    labels = np.asarray(labels, dtype=np.int64)
    length, classes = log_probs.shape
    if labels.shape != (length,):
        raise DataError(f"expected {length} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    valid = _valid_mask(mask, length)
    count = int(valid.sum())
    if count == 0:
        warnings.warn("cross-entropy over a fully masked sequence; returning 0", RuntimeWarning, stacklevel=2)
        return Tensor(0.0)
    rows = np.nonzero(valid)[0]
    picked = clamp_min(getitem(log_probs, (rows, labels[rows])), LOG_FLOOR)
    return -picked.sum() * (1.0 / count)


def smoothing_loss(log_probs, clip: float = 4.0, mask=None) -> Tensor:
    """Truncated MSE between log-probabilities of adjacent frames.

    Each squared gap is capped at ``clip**2``; the earlier frame of every pair
    is treated as a constant.
    """
    length, classes = log_probs.shape
    valid = _valid_mask(mask, length)
    pairs = valid[1:] & valid[:-1]
    count = int(pairs.sum())
    if length < 2 or count == 0:
        return Tensor(0.0)
    rows = np.nonzero(pairs)[0]
    current = getitem(log_probs, rows + 1)
    previous = Tensor(log_probs.data[rows])
    gap = current - previous
    return clamp_max(gap * gap, clip * clip).sum() * (1.0 / (count * classes))


def stage_loss(output: StageOutput, labels, mask=None, smoothing_weight: float = 0.15, clip: float = 4.0) -> Tensor:
    loss = ce_loss(output.log_probs, labels, mask)
    if smoothing_weight:
        loss = loss + smoothing_weight * smoothing_loss(output.log_probs, clip, mask)
    return loss


def multi_stage_loss(outputs: Sequence[StageOutput], labels, mask=None, smoothing_weight: float = 0.15,
                     clip: float = 4.0) -> Tensor:
    """Sum over stages of cross-entropy plus weighted smoothing loss."""
    if not outputs:
        raise UsageError("multi_stage_loss needs at least one stage output")
    total = stage_loss(outputs[0], labels, mask, smoothing_weight, clip)
    for out in outputs[1:]:
        total = total + stage_loss(out, labels, mask, smoothing_weight, clip)
    return total


# -- optimisation ---------------------------------------------------------------
@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def optimizer_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState, lr: float,
                   weight_decay: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One AdamW update in place, with decoupled weight decay and bias correction."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise UsageError("parameter, gradient and moment lists differ in length")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise UsageError(f"gradient shape {g.shape} does not match parameter shape {p.data.shape}")
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class AdamW:
    def __init__(self, params: Sequence[Tensor], weight_decay: float = 1e-5, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self, lr: float) -> None:
        optimizer_step(self.params, [p.grad for p in self.params], self.state, lr, self.weight_decay,
                       self.betas[0], self.betas[1], self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``; return the norm before clipping."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads:
            g *= factor
    return total


def cosine_lr(epoch: int, config: TrainConfig, total: int | None = None) -> float:
    """Linear warmup from 0 to ``base_lr``, then half-cosine down to ``min_lr``.

    ``total`` overrides ``config.total_epochs`` (used when the schedule runs
    over optimiser steps instead of epochs).
    """
    total = config.total_epochs if total is None else total
    warmup = min(config.warmup_epochs, total)
    if not 0 <= epoch < total:
        raise UsageError(f"schedule position {epoch} outside [0, {total})")
    if epoch < warmup:
        return config.base_lr * epoch / warmup
    span = max(total - warmup, 1)
    progress = (epoch - warmup) / span
    return config.min_lr + 0.5 * (config.base_lr - config.min_lr) * (1.0 + math.cos(math.pi * progress))


# -- training loop ------------------------------------------------------------
def frame_accuracy_np(pred: np.ndarray, labels: np.ndarray) -> float:
    return 100.0 * float(np.mean(pred == labels))


def evaluate_accuracy(model: SPRMamba, dataset) -> float:
    """Frame accuracy of the final stage in eval mode, pooled over sequences."""
    correct = total = 0
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for seq in dataset:
                pred = model(np.asarray(seq.features, dtype=np.float64))[-1].probs.data.argmax(axis=1)
                correct += int((pred == np.asarray(seq.labels)).sum())
                total += len(seq.labels)
    finally:
        model.train(was_training)
    return 100.0 * correct / max(total, 1)


def train(dataset, model_config: ModelConfig, train_config: TrainConfig, validation=None,
          model: SPRMamba | None = None, progress=None) -> tuple[SPRMamba, TrainHistory]:
    """Fit an SPRMamba model one full sequence per optimiser step.

    ``dataset`` (and ``validation``) are sequences of objects exposing
    ``features`` ``[L, D]`` and ``labels`` ``[L]``.  With a validation split
    the parameters of the best validation epoch are restored at the end.
    ``train_config.max_steps > 0`` caps the number of optimiser steps and
    evaluates the schedule per step instead of per epoch.
    """
    dataset = list(dataset)
    if not dataset:
        raise UsageError("training needs at least one sequence")
    for seq in dataset:
        if np.asarray(seq.features).shape[1] != model_config.input_dim:
            raise DimensionError(f"feature dim {np.asarray(seq.features).shape[1]} != input_dim {model_config.input_dim}")
    model = SPRMamba(model_config) if model is None else model
    model.train()
    params = model.parameters()
    opt = AdamW(params, weight_decay=train_config.weight_decay,
                betas=(train_config.beta1, train_config.beta2), eps=train_config.eps)
    rng = np.random.default_rng(train_config.seed)
    history = TrainHistory()
    per_step = train_config.max_steps > 0
    step = 0
    best = (-1.0, None)

    for epoch in range(train_config.total_epochs):
        if per_step and step >= train_config.max_steps:
            break
        lr = None if per_step else cosine_lr(epoch, train_config)
        totals, stage_sums, correct, frames, used = 0.0, None, 0, 0, 0
        for i in rng.permutation(len(dataset)):
            if per_step:
                if step >= train_config.max_steps:
                    break
                lr = cosine_lr(step, train_config, total=train_config.max_steps)
            seq = dataset[i]
            labels = np.asarray(seq.labels, dtype=np.int64)
            outputs = model(np.asarray(seq.features, dtype=np.float64))
            losses = [stage_loss(o, labels, None, train_config.smoothing_weight, train_config.smoothing_clip)
                      for o in outputs]
            loss = losses[0]
            for extra in losses[1:]:
                loss = loss + extra
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            clip_grad_norm(params, train_config.grad_clip)
            opt.step(lr)
            step += 1
            used += 1
            totals += float(loss.data)
            values = [float(x.data) for x in losses]
            stage_sums = values if stage_sums is None else [a + b for a, b in zip(stage_sums, values)]
            correct += int((outputs[-1].probs.data.argmax(axis=1) == labels).sum())
            frames += labels.size
        record = EpochRecord(epoch=epoch, lr=float(lr), total_loss=totals / used,
                             stage_losses=[v / used for v in stage_sums], train_acc=100.0 * correct / frames)
        if validation:
            record.val_acc = evaluate_accuracy(model, validation)
            if record.val_acc > best[0]:
                best = (record.val_acc, model.state_dict())
        history.records.append(record)
        logger.debug("epoch %d lr=%.3g loss=%.4f acc=%.2f", epoch, record.lr, record.total_loss, record.train_acc)
        if progress is not None:
            progress(record)

    if best[1] is not None:
        model.load_state_dict(best[1])
    model.eval()
    return model, history
