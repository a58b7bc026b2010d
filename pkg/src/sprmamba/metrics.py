"""Frame accuracy, per-phase precision/recall/Jaccard and the relaxed protocol.

All values are percentages.  Per-phase scores are averaged over the phases
that occur in the ground truth or the prediction of a video; phases absent
from both are skipped.  Undefined ratios (empty denominators) score 0.

Relaxed protocol: around every ground-truth boundary at frame ``k`` (phase
``a`` before, ``b`` from ``k`` on), frames ``k - w .. k + w - 1`` predicted
as ``a`` or ``b`` are counted as correct, where ``w = window_seconds * fps``.
The corrected predictions then go through the standard computations, so
relaxed scores are never below standard ones.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DataError

METRICS = ("accuracy", "precision", "recall", "jaccard")


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)
    if pred.shape != gt.shape:
        raise DataError(f"prediction length {pred.size} != ground-truth length {gt.size}")
    if pred.size == 0:
        raise DataError("cannot score an empty sequence")
    return pred, gt


def frame_accuracy(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return 100.0 * float(np.count_nonzero(pred == gt)) / pred.size


@dataclass
class PhaseScores:
    precision: dict[int, float]
    recall: dict[int, float]
    jaccard: dict[int, float]

    @property
    def phases(self) -> list[int]:
        return sorted(self.precision)

    def mean(self, metric: str) -> float:
        values = list(getattr(self, metric).values())
        return float(np.mean(values)) if values else 0.0


def _ratio(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


def phase_prf_jaccard(pred, gt, num_classes: int | None = None) -> PhaseScores:
    pred, gt = _pair(pred, gt)
    if min(pred.min(), gt.min()) < 0:
        raise DataError("phase labels must be non-negative")
    k = int(max(pred.max(), gt.max())) + 1 if num_classes is None else num_classes
    if max(pred.max(), gt.max()) >= k:
        raise DataError(f"phase labels must lie in [0, {k})")
    confusion = np.bincount(gt * k + pred, minlength=k * k).reshape(k, k)
    tp = np.diag(confusion)
    gt_count = confusion.sum(axis=1)
    pred_count = confusion.sum(axis=0)
    precision, recall, jaccard = {}, {}, {}
    for c in range(k):
        if gt_count[c] == 0 and pred_count[c] == 0:
            continue
        precision[c] = _ratio(tp[c], pred_count[c])
        recall[c] = _ratio(tp[c], gt_count[c])
        jaccard[c] = _ratio(tp[c], gt_count[c] + pred_count[c] - tp[c])
    return PhaseScores(precision, recall, jaccard)


def boundaries(gt) -> np.ndarray:
    """Frames ``k`` where ``gt[k] != gt[k-1]``."""
    gt = np.asarray(gt)
    return np.nonzero(gt[1:] != gt[:-1])[0] + 1


def relax_predictions(pred, gt, fps: float, window_seconds: float = 10.0) -> np.ndarray:
    """Predictions with boundary-adjacent confusions replaced by the ground truth."""
    pred, gt = _pair(pred, gt)
    if fps <= 0 or window_seconds < 0:
        raise DataError(f"fps must be positive and window non-negative, got fps={fps}, window={window_seconds}")
    w = int(round(window_seconds * fps))
    out = pred.copy()
    for k in boundaries(gt):
        lo, hi = max(k - w, 0), min(k + w, gt.size)
        before, after = gt[k - 1], gt[k]
        span = slice(lo, hi)
        forgiven = (pred[span] == before) | (pred[span] == after)
        out[span] = np.where(forgiven, gt[span], out[span])
    return out


@dataclass
class VideoMetrics:
    video_id: str
    accuracy: float
    precision: float
    recall: float
    jaccard: float
    phases: PhaseScores

    def value(self, metric: str) -> float:
        return getattr(self, metric)


def evaluate_video(pred, gt, video_id: str = "video", num_classes: int | None = None, relaxed: bool = False,
                   fps: float = 1.0, window_seconds: float = 10.0) -> VideoMetrics:
    pred, gt = _pair(pred, gt)
    if relaxed:
        pred = relax_predictions(pred, gt, fps, window_seconds)
    scores = phase_prf_jaccard(pred, gt, num_classes)
    return VideoMetrics(video_id, frame_accuracy(pred, gt), scores.mean("precision"), scores.mean("recall"),
                        scores.mean("jaccard"), scores)


@dataclass
class Summary:
    mean: float
    std: float

    def __str__(self) -> str:
        return f"{self.mean:.2f}±{self.std:.2f}"


def aggregate(values: Sequence[float]) -> Summary:
    """Mean and population standard deviation."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("aggregate needs at least one video")
    return Summary(float(values.mean()), float(values.std()))


@dataclass
class MetricsReport:
    protocol: str
    videos: list[VideoMetrics] = field(default_factory=list)

    def summary(self, metric: str) -> Summary:
        return aggregate([v.value(metric) for v in self.videos])

    def as_dict(self) -> dict[str, Summary]:
        return {m: self.summary(m) for m in METRICS}

    def to_text(self) -> str:
        name_width = max([len("video")] + [len(v.video_id) for v in self.videos])
        header = f"{'video':<{name_width}}  " + "  ".join(f"{m.capitalize():>14}" for m in METRICS)
        lines = [f"[{self.protocol}]", header]
        for v in self.videos:
            lines.append(f"{v.video_id:<{name_width}}  " + "  ".join(f"{v.value(m):>14.2f}" for m in METRICS))
        lines.append(f"{'mean±std':<{name_width}}  " + "  ".join(f"{str(self.summary(m)):>14}" for m in METRICS))
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["protocol", "metric", "mean", "std"])
        for m in METRICS:
            s = self.summary(m)
            writer.writerow([self.protocol, m, f"{s.mean:.4f}", f"{s.std:.4f}"])
        return buf.getvalue()


def evaluate(pairs, num_classes: int | None = None, relaxed: bool = False, fps: float = 1.0,
             window_seconds: float = 10.0) -> MetricsReport:
    """Score ``(video_id, pred, gt)`` triples, one :class:`VideoMetrics` each."""
    report = MetricsReport("relaxed" if relaxed else "standard")
    for video_id, pred, gt in pairs:
        report.videos.append(evaluate_video(pred, gt, video_id, num_classes, relaxed, fps, window_seconds))
    if not report.videos:
        raise DataError("no videos to evaluate")
    return report


def relaxed_eval(pred, gt, fps: float = 1.0, window_seconds: float = 10.0, num_classes: int | None = None,
                 video_id: str = "video") -> MetricsReport:
    return evaluate([(video_id, pred, gt)], num_classes, relaxed=True, fps=fps, window_seconds=window_seconds)
