"""Input checks shared by the estimator wrapper and the command line."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError, DimensionError


def check_sequence(features, feature_dim: int | None = None, name: str = "sequence") -> np.ndarray:
    """Return ``features`` as a finite float64 ``[L, D]`` array with ``L >= 1``."""
    array = np.asarray(features, dtype=np.float64)
    if array.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D [frames, features] array, got shape {array.shape}")
    if array.shape[0] < 1:
        raise DataError(f"{name}: empty sequence")
    if feature_dim is not None and array.shape[1] != feature_dim:
        raise DimensionError(f"{name}: expected {feature_dim} features per frame, got {array.shape[1]}")
    if not np.all(np.isfinite(array)):
        raise DataError(f"{name}: features contain NaN or Inf")
    return array


def check_sequences(X, feature_dim: int | None = None) -> list[np.ndarray]:
    """Validate a list of ``[L_i, D]`` sequences sharing one feature dimension."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    sequences = list(X)
    if not sequences:
        raise DataError("expected at least one sequence")
    first = check_sequence(sequences[0], feature_dim, "sequence 0")
    dim = first.shape[1]
    return [first] + [check_sequence(s, dim, f"sequence {i}") for i, s in enumerate(sequences[1:], start=1)]


def check_labels(y, sequences: list[np.ndarray], num_classes: int | None = None) -> list[np.ndarray]:
    """Validate per-frame integer labels aligned with ``sequences``."""
    if isinstance(y, np.ndarray) and y.ndim == 1 and len(sequences) == 1:
        y = [y]
    labels = [np.asarray(v) for v in y]
    if len(labels) != len(sequences):
        raise DataError(f"{len(labels)} label arrays for {len(sequences)} sequences")
    out = []
    for i, (lab, seq) in enumerate(zip(labels, sequences)):
        if lab.shape != (seq.shape[0],):
            raise DataError(f"sequence {i}: {lab.size} labels for {seq.shape[0]} frames")
        if not np.issubdtype(lab.dtype, np.integer):
            if not np.all(np.equal(np.mod(lab, 1), 0)):
                raise DataError(f"sequence {i}: labels must be integers")
        lab = lab.astype(np.int64)
        if lab.min() < 0 or (num_classes is not None and lab.max() >= num_classes):
            raise DataError(f"sequence {i}: labels must lie in [0, {num_classes})")
        out.append(lab)
    return out
