"""Feature/label files, prediction CSVs and the synthetic workflow generator.

SPRF layout (little-endian)::

    offset 0   4 bytes  magic b"SPRF"
    offset 4   u32      version (1)
    offset 8   u64      L (frames)
    offset 16  u64      D (feature dim)
    offset 24  u32      fps
    offset 28  L*D f32  features, row-major

Labels live next to the feature file in ``<stem>.labels.csv`` with header
``frame,phase``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError, DataError, FormatError

MAGIC = b"SPRF"
VERSION = 1
_HEADER = struct.Struct("<4sIQQI")
FEATURE_SUFFIX = ".sprf"
LABEL_SUFFIX = ".labels.csv"
# mean frames per phase for the default grammar; deliberately imbalanced
DEFAULT_DURATIONS = (40.0, 60.0, 90.0, 70.0, 80.0, 60.0, 50.0, 62.0)


@dataclass
class FeatureSequence:
    video_id: str
    features: np.ndarray
    labels: np.ndarray | None = None
    fps: int = 1

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise DataError(f"features must be [L, D], got shape {self.features.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise DataError(f"{self.video_id}: {self.labels.size} labels for {self.features.shape[0]} frames")
            if self.labels.size and self.labels.min() < 0:
                raise DataError(f"{self.video_id}: negative phase label")
        if self.fps < 1:
            raise DataError(f"fps must be >= 1, got {self.fps}")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


# -- SPRF ---------------------------------------------------------------------
def write_features(path, seq: FeatureSequence, write_labels: bool = True) -> Path:
    """Write ``seq`` as SPRF (plus the labels CSV when labels are present)."""
    path = Path(path)
    length, dim = seq.features.shape
    if length == 0:
        raise DataError("empty sequences cannot be written")
    payload = np.ascontiguousarray(seq.features, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, length, dim, int(seq.fps)))
        fh.write(payload)
    if write_labels and seq.labels is not None:
        write_labels_csv(label_path(path), seq.labels)
    return path


def read_features(path, labels: bool = True) -> FeatureSequence:
    """Read an SPRF file; the sibling labels CSV is attached when it exists."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at offset {len(raw)} (need {_HEADER.size} bytes)")
    magic, version, length, dim, fps = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if length == 0:
        raise FormatError(f"{path}: zero-length sequence at offset 8")
    expected = _HEADER.size + 4 * length * dim
    if len(raw) != expected:
        kind = "truncated payload" if len(raw) < expected else "trailing bytes"
        raise FormatError(f"{path}: {kind} at offset {min(len(raw), expected)} (expected {expected} bytes)")
    features = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(length, dim).astype(np.float32)
    lab = None
    if labels and label_path(path).exists():
        lab = read_labels_csv(label_path(path))
    return FeatureSequence(video_id=video_id_of(path), features=features, labels=lab, fps=int(fps))


def video_id_of(path) -> str:
    name = Path(path).name
    return name[: -len(FEATURE_SUFFIX)] if name.endswith(FEATURE_SUFFIX) else Path(path).stem


def label_path(feature_path) -> Path:
    feature_path = Path(feature_path)
    return feature_path.with_name(video_id_of(feature_path) + LABEL_SUFFIX)


def write_labels_csv(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "phase"])
        writer.writerows(enumerate(int(x) for x in labels))


def read_labels_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "phase"]:
            raise FormatError(f"{path}: expected header 'frame,phase', got {header}")
        labels = []
        for lineno, row in enumerate(reader, start=2):
            try:
                frame, phase = int(row[0]), int(row[1])
            except (IndexError, ValueError):
                raise FormatError(f"{path}: malformed row at line {lineno}: {row}") from None
            if frame != len(labels):
                raise FormatError(f"{path}: frame {frame} out of order at line {lineno}")
            labels.append(phase)
    return np.asarray(labels, dtype=np.int64)


def list_sequences(data_dir) -> list[Path]:
    return sorted(Path(data_dir).glob("*" + FEATURE_SUFFIX))


def load_dir(data_dir, require_labels: bool = True) -> list[FeatureSequence]:
    sequences = [read_features(p) for p in list_sequences(data_dir)]
    if require_labels:
        missing = [s.video_id for s in sequences if s.labels is None]
        if missing:
            raise DataError(f"missing label files for {missing}")
    return sequences


# -- predictions ----------------------------------------------------------------
@dataclass
class Predictions:
    true: np.ndarray
    pred: np.ndarray
    probs: np.ndarray


def write_predictions(path, probs, true=None, pred=None) -> None:
    """Write ``frame,true,pred,p0..`` rows; ``true`` is -1 when labels are unknown."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise DataError(f"probabilities must be [L, classes], got {probs.shape}")
    length = probs.shape[0]
    pred = probs.argmax(axis=1) if pred is None else np.asarray(pred, dtype=np.int64)
    true = np.full(length, -1, dtype=np.int64) if true is None else np.asarray(true, dtype=np.int64)
    if pred.shape != (length,) or true.shape != (length,):
        raise DataError(f"length mismatch: probs {length}, pred {pred.shape}, true {true.shape}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "true", "pred", *[f"p{c}" for c in range(probs.shape[1])]])
        for t in range(length):
            writer.writerow([t, int(true[t]), int(pred[t]), *[f"{p:.6f}" for p in probs[t]]])


def read_predictions(path) -> Predictions:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["frame", "true", "pred"]:
            raise FormatError(f"{path}: expected header starting 'frame,true,pred', got {header}")
        rows = list(reader)
    try:
        table = np.array([[float(x) for x in row] for row in rows], dtype=np.float64).reshape(len(rows), len(header))
    except ValueError as exc:
        raise FormatError(f"{path}: malformed prediction rows ({exc})") from None
    return Predictions(true=table[:, 1].astype(np.int64), pred=table[:, 2].astype(np.int64), probs=table[:, 3:])


# -- synthetic workflows ---------------------------------------------------------
@dataclass
class SynthConfig:
    """Seeded generator of phase-structured feature sequences.

    Phases are visited in index order; each may be skipped, and after a phase
    the walk may revisit one earlier phase before continuing.  Durations are
    log-normal around ``durations[c]`` with shape ``dispersion`` (the mean of
    the unrounded draw equals the configured value).
    """

    num_classes: int = 8
    num_sequences: int = 10
    feature_dim: int = 32
    skip_prob: list[float] | None = None
    revisit_prob: list[float] | None = None
    durations: list[float] | None = None
    dispersion: float = 0.2
    separation: float = 4.0
    drift: float = 1.0
    noise: float = 0.5
    persistence: float = 0.95
    fixed_length: int = 0
    fps: int = 1
    seed: int = 0

    def __post_init__(self):
        k = self.num_classes
        if k < 1 or self.num_sequences < 1 or self.feature_dim < 1:
            raise ConfigurationError("num_classes, num_sequences and feature_dim must be >= 1")
        defaults = {"skip_prob": [0.0] * k, "revisit_prob": [0.0] * k,
                    "durations": [DEFAULT_DURATIONS[c % len(DEFAULT_DURATIONS)] for c in range(k)]}
        for name in ("skip_prob", "revisit_prob", "durations"):
            values = getattr(self, name)
            if values is None:
                values = defaults[name]
            if isinstance(values, (int, float)):
                values = [float(values)] * k
            values = [float(v) for v in values]
            if len(values) != k:
                raise ConfigurationError(f"{name} needs {k} entries, got {len(values)}")
            setattr(self, name, values)
        if any(not 0.0 <= p <= 1.0 for p in self.skip_prob + self.revisit_prob):
            raise ConfigurationError("skip/revisit probabilities must lie in [0, 1]")
        if all(p >= 1.0 for p in self.skip_prob):
            raise ConfigurationError("at least one phase must be possible (not every phase can be skipped)")
        if any(d < 1 for d in self.durations):
            raise ConfigurationError("mean phase durations must be >= 1 frame")
        if self.dispersion < 0 or self.separation < 0 or self.drift < 0 or self.noise < 0:
            raise ConfigurationError("dispersion, separation, drift and noise must be non-negative")
        if not 0.0 <= self.persistence < 1.0:
            raise ConfigurationError(f"persistence must lie in [0, 1), got {self.persistence}")
        if self.fixed_length < 0 or self.fps < 1:
            raise ConfigurationError("fixed_length must be >= 0 and fps >= 1")


def phase_centers(config: SynthConfig) -> np.ndarray:
    """Cluster centres; pairwise distances concentrate around ``separation``."""
    rng = np.random.default_rng([config.seed, 0xC3])
    return config.separation * rng.standard_normal((config.num_classes, config.feature_dim)) / np.sqrt(2.0 * config.feature_dim)


def _phase_walk(config: SynthConfig, rng: np.random.Generator) -> list[int]:
    order: list[int] = []
    for phase in range(config.num_classes):
        if rng.random() < config.skip_prob[phase]:
            continue
        order.append(phase)
        visited = sorted(set(order[:-1]))
        if visited and rng.random() < config.revisit_prob[phase]:
            order.append(int(rng.choice(visited)))
    if not order:
        # every phase was skipped by chance: keep the likeliest one
        order.append(int(np.argmin(config.skip_prob)))
    return order


def _durations(config: SynthConfig, phases: list[int], rng: np.random.Generator) -> np.ndarray:
    sigma = config.dispersion
    means = np.asarray([config.durations[p] for p in phases])
    raw = rng.lognormal(np.log(means) - 0.5 * sigma**2, sigma)
    return np.maximum(np.rint(raw).astype(np.int64), 1)


def _fit_length(durations: np.ndarray, target: int) -> np.ndarray:
    # rescale to an exact total while keeping every segment >= 1 frame
    if target < durations.size:
        durations = durations[:target]
    scaled = np.maximum(np.floor(durations * target / durations.sum()).astype(np.int64), 1)
    deficit = target - scaled.sum()
    order = np.argsort(-durations, kind="stable")
    i = 0
    while deficit != 0:
        j = order[i % order.size]
        if deficit > 0:
            scaled[j] += 1
            deficit -= 1
        elif scaled[j] > 1:
            scaled[j] -= 1
            deficit += 1
        i += 1
    return scaled


def gen_sequence(config: SynthConfig, index: int, centers: np.ndarray | None = None) -> FeatureSequence:
    rng = np.random.default_rng([config.seed, index])
    centers = phase_centers(config) if centers is None else centers
    phases = _phase_walk(config, rng)
    durations = _durations(config, phases, rng)
    if config.fixed_length:
        durations = _fit_length(durations, config.fixed_length)
        phases = phases[: durations.size]
    labels = np.repeat(np.asarray(phases, dtype=np.int64), durations)
    length, dim = labels.size, config.feature_dim
    # AR(1) drift per segment with stationary std = drift
    rho = config.persistence
    shocks = rng.standard_normal((length, dim)) * config.drift * np.sqrt(1.0 - rho**2)
    walk = np.empty((length, dim))
    start = 0
    for d in durations:
        state = rng.standard_normal(dim) * config.drift
        for t in range(start, start + d):
            state = rho * state + shocks[t]
            walk[t] = state
        start += d
    features = centers[labels] + walk + config.noise * rng.standard_normal((length, dim))
    return FeatureSequence(video_id=f"video_{index:03d}", features=features.astype(np.float32),
                           labels=labels, fps=config.fps)


def gen_synthetic(config: SynthConfig) -> list[FeatureSequence]:
    """Generate ``config.num_sequences`` sequences, deterministic in ``config.seed``."""
    centers = phase_centers(config)
    return [gen_sequence(config, i, centers) for i in range(config.num_sequences)]


def phase_totals(sequences: Sequence[FeatureSequence], num_classes: int) -> np.ndarray:
    totals = np.zeros(num_classes, dtype=np.int64)
    for seq in sequences:
        totals += np.bincount(seq.labels, minlength=num_classes)[:num_classes]
    return totals
