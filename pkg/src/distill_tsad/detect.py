"""Anomaly scoring: window discrepancies, per-timestep traces, thresholds.

The anomaly score of a window is the squared distance between the student
and teacher representations.  A series is scored with a sliding window and
each timestep receives the mean (or max) of the scores of all windows that
cover it.
"""

from __future__ import annotations

import xml.sax.saxutils
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from . import preprocess
from .core import DataError, TimeSeriesDataset
from .evaluate import EventSet
from .training import ModelState, squared_distance


@dataclass
class ScoreTrace:
    """Per-timestep anomaly scores with their window-level provenance."""

    point_scores: np.ndarray          # [L'] float64, 0 where uncovered
    window_scores: np.ndarray         # [N] float64
    coverage: np.ndarray              # [L'] windows covering each timestep
    starts: np.ndarray                # [N] window start indices
    stride: int
    labels: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return len(self.point_scores)


def score_batch(state: ModelState, windows, batch_size: int = 256) -> np.ndarray:
    """Anomaly scores ||phi(w) - varphi(w)||^2 for a [N x D x T] batch."""
    windows = np.asarray(windows, dtype=np.float32)
    scores = np.empty(len(windows), dtype=np.float64)
    with torch.no_grad():
        for lo in range(0, len(windows), batch_size):
            chunk = windows[lo : lo + batch_size]
            z = state.student(chunk, state.pool)
            c = state.teacher(chunk)
            scores[lo : lo + len(chunk)] = squared_distance(z, c).numpy()
    return scores


def score_window(state: ModelState, window) -> float:
    """Anomaly score of a single [D x T] window."""
    window = np.asarray(window, dtype=np.float32)
    if window.ndim != 2:
        raise ValueError(f"expected a [D x T] window, got shape {window.shape}")
    return float(score_batch(state, window[None])[0])


def score_series(state: ModelState, series: TimeSeriesDataset, stride: int = 1,
                 aggregate: str = "mean", batch_size: int = 256) -> ScoreTrace:
    """Slide over the series and aggregate window scores per timestep.

    Timesteps covered by no window (possible only for stride > 1 tails)
    score 0 with coverage 0.
    """
    if aggregate not in ("mean", "max"):
        raise ValueError(f"aggregate must be 'mean' or 'max', got {aggregate!r}")
    size = state.config.window_size
    batch = preprocess.window(series, size, stride)
    window_scores = score_batch(state, batch.windows, batch_size=batch_size)

    length = series.length
    coverage = np.zeros(length, dtype=np.int64)
    if aggregate == "mean":
        acc = np.zeros(length, dtype=np.float64)
        for start, score in zip(batch.starts, window_scores):
            acc[start : start + size] += score
            coverage[start : start + size] += 1
        points = np.divide(acc, coverage, out=np.zeros(length), where=coverage > 0)
    else:
        points = np.zeros(length, dtype=np.float64)
        for start, score in zip(batch.starts, window_scores):
            np.maximum(points[start : start + size], score,
                       out=points[start : start + size])
            coverage[start : start + size] += 1
    return ScoreTrace(point_scores=points, window_scores=window_scores,
                      coverage=coverage, starts=batch.starts, stride=stride,
                      labels=None if series.labels is None else series.labels.copy())


def threshold(trace: ScoreTrace, quantile: float):
    """Predict 1 strictly above the given score quantile; merge runs of 1s.

    Returns (binary predictions [L'], EventSet of half-open events).
    """
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"quantile must lie in (0, 1), got {quantile}")
    cut = np.quantile(trace.point_scores, quantile)
    preds = (trace.point_scores > cut).astype(np.int64)
    return preds, EventSet.from_binary(preds)


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """Map scores to [0, 1]; a constant trace maps to zeros."""
    scores = np.asarray(scores, dtype=np.float64)
    lo, hi = scores.min(), scores.max()
    if hi <= lo:
        return np.zeros_like(scores)
    return (scores - lo) / (hi - lo)


def write_trace_csv(trace: ScoreTrace, path) -> None:
    """Emit the trace as `t,score[,label]` rows; scores keep full precision."""
    with open(path, "w", encoding="utf-8") as fh:
        if trace.labels is not None:
            fh.write("t,score,label\n")
            for t, (score, label) in enumerate(zip(trace.point_scores, trace.labels)):
                fh.write(f"{t},{score:.17g},{int(label)}\n")
        else:
            fh.write("t,score\n")
            for t, score in enumerate(trace.point_scores):
                fh.write(f"{t},{score:.17g}\n")


def read_trace_csv(path):
    """Read back a trace CSV; returns (scores [L'], labels [L'] or None)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["t", "score"]:
            raise DataError(f"{path}: not a trace CSV (header {header!r})")
        has_labels = len(header) > 2 and header[2] == "label"
        scores, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                scores.append(float(parts[1]))
                if has_labels:
                    labels.append(int(parts[2]))
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed trace row {line!r}") from exc
    return (np.asarray(scores, dtype=np.float64),
            np.asarray(labels, dtype=np.int64) if has_labels else None)


def render_svg(trace: ScoreTrace, path, width: int = 960, height: int = 240) -> None:
    """Line plot of min-max normalized scores with truth spans shaded."""
    margin = 10.0
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    norm = minmax_normalize(trace.point_scores)
    n = len(norm)
    xs = margin + plot_w * (np.arange(n) / max(n - 1, 1))
    ys = margin + plot_h * (1.0 - norm)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if trace.labels is not None:
        for s, e in EventSet.from_binary(trace.labels):
            x0 = margin + plot_w * (s / max(n - 1, 1))
            x1 = margin + plot_w * (max(e - 1, s) / max(n - 1, 1))
            parts.append(
                f'<rect x="{x0:.3f}" y="{margin:.3f}" width="{max(x1 - x0, 1.0):.3f}" '
                f'height="{plot_h:.3f}" fill="#fbb" fill-opacity="0.6"/>'
            )
    points = " ".join(f"{x:.3f},{y:.3f}" for x, y in zip(xs, ys))
    parts.append(
        f'<polyline points="{xml.sax.saxutils.escape(points)}" fill="none" '
        f'stroke="#146" stroke-width="1"/>'
    )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
