"""Segment ribbons: a compact picture of a phase sequence, as text or SVG."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

SYMBOLS = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"
PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
           "#9c755f", "#bab0ac")


def bucket_labels(labels, width: int) -> np.ndarray:
    """Majority phase per bucket when ``labels`` is squeezed into ``width`` buckets."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return labels
    width = max(1, min(width, labels.size))
    edges = np.linspace(0, labels.size, width + 1).round().astype(int)
    return np.array([np.bincount(labels[a:b]).argmax() for a, b in zip(edges[:-1], edges[1:])])


def text_ribbon(labels, width: int = 80) -> str:
    return "".join(SYMBOLS[c % len(SYMBOLS)] for c in bucket_labels(labels, width))


def ribbon_block(video_id: str, gt, pred, width: int = 80) -> str:
    return f"{video_id}\n  gt   |{text_ribbon(gt, width)}|\n  pred |{text_ribbon(pred, width)}|"


def svg_ribbons(rows: list[tuple[str, np.ndarray]], width: int = 600, row_height: int = 18) -> str:
    """One horizontal bar per ``(label, phases)`` row, coloured by phase."""
    label_w = 8 * max([len(name) for name, _ in rows] + [4]) + 10
    height = row_height * len(rows) + 4 * (len(rows) + 1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{label_w + width + 4}" height="{height}" '
             f'font-family="monospace" font-size="12">']
    for r, (name, labels) in enumerate(rows):
        labels = np.asarray(labels, dtype=np.int64)
        y = 4 + r * (row_height + 4)
        parts.append(f'<text x="2" y="{y + row_height - 5}">{escape(name)}</text>')
        if labels.size == 0:
            continue
        cuts = np.concatenate([[0], np.nonzero(labels[1:] != labels[:-1])[0] + 1, [labels.size]])
        for a, b in zip(cuts[:-1], cuts[1:]):
            x0 = label_w + width * a / labels.size
            w = width * (b - a) / labels.size
            colour = PALETTE[labels[a] % len(PALETTE)]
            parts.append(f'<rect x="{x0:.2f}" y="{y}" width="{w:.2f}" height="{row_height}" fill="{colour}">'
                         f'<title>phase {labels[a]}: frames {a}-{b - 1}</title></rect>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
