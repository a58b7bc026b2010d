"""Window partitioning and stride-``G`` reordering of frame sequences.

Both samplings are frame permutations plus trailing zero padding, expressed
as index maps where ``-1`` marks a pad slot.  They accept numpy arrays or
:class:`~sprmamba.tensor.Tensor` objects of shape ``[L, C]``; tensors stay
differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DimensionError
from .tensor import Tensor, take


@dataclass(frozen=True)
class SamplingConfig:
    window: int = 64
    stride: int = 64
    pad_value: float = 0.0

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ConfigurationError(f"window and stride must be >= 1, got W={self.window}, G={self.stride}")


def window_index(length: int, window: int) -> np.ndarray:
    """``[ceil(L/W), W]`` frame indices, row ``i`` holding frames ``iW .. iW+W-1``."""
    _check(length, window)
    count = -(-length // window)
    idx = np.arange(count * window)
    return np.where(idx < length, idx, -1).reshape(count, window)


def longrange_index(length: int, stride: int) -> np.ndarray:
    """``[G, ceil(L/G)]`` frame indices, row ``g`` holding frames ``g, g+G, ...``."""
    _check(length, stride)
    per = -(-length // stride)
    idx = np.arange(per * stride).reshape(per, stride).T
    return np.where(idx < length, idx, -1)


def _check(length: int, size: int) -> None:
    if length < 1:
        raise DimensionError(f"sequence length must be >= 1, got {length}")
    if size < 1:
        raise ConfigurationError(f"window/stride must be >= 1, got {size}")


def _gather(frames, index: np.ndarray):
    if isinstance(frames, Tensor):
        return take(frames, index, axis=-2)
    frames = np.asarray(frames)
    valid = (index >= 0).reshape(index.shape + (1,) * (frames.ndim - 1))
    out = np.take(frames, np.where(index >= 0, index, 0), axis=-2)
    return np.where(valid, out, np.zeros((), dtype=frames.dtype))


def _scatter_back(blocks, index: np.ndarray, length: int):
    # inverse permutation: position of every original frame inside the block layout
    flat = index.reshape(-1)
    position = np.empty(length, dtype=np.int64)
    position[flat[flat >= 0]] = np.nonzero(flat >= 0)[0]
    if isinstance(blocks, Tensor):
        merged = blocks.reshape(blocks.shape[:-3] + (index.size, blocks.shape[-1]))
        return take(merged, position, axis=-2)
    blocks = np.asarray(blocks)
    merged = blocks.reshape(blocks.shape[:-3] + (index.size, blocks.shape[-1]))
    return np.take(merged, position, axis=-2)


def window_partition(frames, window: int):
    """Split ``[L, C]`` frames into ``[ceil(L/W), W, C]`` windows plus a validity mask."""
    index = window_index(frames.shape[-2], window)
    return _gather(frames, index), index >= 0


def window_merge(windows, length: int):
    """Inverse of :func:`window_partition`; drops pad frames."""
    return _scatter_back(windows, window_index(length, windows.shape[-2]), length)


def longrange_reorder(frames, stride: int):
    """Reorder ``[L, C]`` frames into ``[G, ceil(L/G), C]`` strided subsequences plus a mask."""
    index = longrange_index(frames.shape[-2], stride)
    return _gather(frames, index), index >= 0


def longrange_inverse(subsequences, length: int):
    """Restore the original frame order from :func:`longrange_reorder` output."""
    return _scatter_back(subsequences, longrange_index(length, subsequences.shape[-3]), length)
