"""Event-wise and point-wise anomaly metrics.

Affiliation metrics grade predictions by their distance to ground-truth
events, normalized against a uniformly random single point: the timeline is
partitioned into one zone per truth event (boundaries at midpoints between
consecutive events), and each distance is converted to the probability that
a random point in the zone would be at least as far away.  A prediction that
lands inside the event therefore scores 1, and an uninformed random guess
scores about 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DataError


@dataclass(frozen=True)
class EventSet:
    """Sorted, disjoint half-open integer intervals [s, e)."""

    events: tuple

    def __post_init__(self):
        events = tuple((int(s), int(e)) for s, e in self.events)
        events = tuple(sorted(events))
        for s, e in events:
            if s < 0 or e <= s:
                raise DataError(f"invalid event [{s}, {e}): need 0 <= s < e")
        for (_, prev_end), (start, _) in zip(events, events[1:]):
            if start < prev_end:
                raise DataError("events overlap")
        object.__setattr__(self, "events", events)

    @classmethod
    def from_binary(cls, labels) -> "EventSet":
        """Merge consecutive 1s of a binary vector into events."""
        labels = np.asarray(labels).astype(bool)
        padded = np.concatenate(([False], labels, [False]))
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        return cls(tuple(zip(edges[::2], edges[1::2])))

    def to_binary(self, length: int) -> np.ndarray:
        out = np.zeros(length, dtype=np.int64)
        for s, e in self.events:
            out[s:e] = 1
        return out

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def total_points(self) -> int:
        return sum(e - s for s, e in self.events)


@dataclass(frozen=True)
class AffiliationResult:
    precision: float
    recall: float
    f1: float
    precision_undefined: bool = False


def _event_distance(points: np.ndarray, start: int, end: int) -> np.ndarray:
    """Distance from integer points to the nearest integer point of [start, end)."""
    return np.maximum(start - points, 0) + np.maximum(points - (end - 1), 0)


def _zone_bounds(truth: EventSet, horizon: int) -> list:
    """One zone per truth event; the cut between neighbours sits at the
    midpoint, ties going to the earlier event."""
    bounds = []
    events = truth.events
    for k, (s, e) in enumerate(events):
        if k == 0:
            lo = 0
        else:
            prev_end = events[k - 1][1]
            lo = (s + prev_end - 1) // 2 + 1
        hi = horizon if k == len(events) - 1 else (events[k + 1][0] + e - 1) // 2 + 1
        bounds.append((lo, hi))
    return bounds


def _points_in_zone(pred: EventSet, lo: int, hi: int) -> np.ndarray:
    pieces = []
    for s, e in pred:
        a, b = max(s, lo), min(e, hi)
        if a < b:
            pieces.append(np.arange(a, b, dtype=np.int64))
    if not pieces:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(pieces)


def _precision_survival(dists: np.ndarray, zone, event) -> np.ndarray:
    """P(dist(U, event) >= d) for U uniform over the zone's integer points."""
    lo, hi = zone
    s, e = event
    size = hi - lo
    left = np.clip(s - dists - lo + 1, 0, size)
    right = np.clip(hi - e - dists + 1, 0, size)
    out = np.minimum(left + right, size) / size
    return np.where(dists == 0, 1.0, out)


def _recall_survival(dists: np.ndarray, points: np.ndarray, zone) -> np.ndarray:
    """P(|y - U| >= d) for U uniform over the zone, per truth point y."""
    lo, hi = zone
    size = hi - lo
    left = np.clip(points - dists - lo + 1, 0, size)
    right = np.clip(hi - points - dists, 0, size)
    out = np.minimum(left + right, size) / size
    return np.where(dists == 0, 1.0, out)


def affiliation_metrics(pred: EventSet, truth: EventSet, horizon: int) -> AffiliationResult:
    """Affiliation precision / recall / F1 over [0, horizon).

    Precision averages, over every predicted point, the survival of its
    distance to the zone's event; recall averages, over every truth point,
    the survival of its distance to the zone's predictions.  Truth points in
    zones holding no prediction contribute the random baseline 0.5; with no
    predictions anywhere precision is undefined and reported as 0 with the
    flag set.
    """
    if len(truth) == 0:
        raise DataError("affiliation metrics require a nonempty truth event set")
    if truth.events[-1][1] > horizon:
        raise DataError("truth events extend beyond the horizon")
    if len(pred) and pred.events[-1][1] > horizon:
        raise DataError("predicted events extend beyond the horizon")

    zones = _zone_bounds(truth, horizon)
    precision_sum, precision_count = 0.0, 0
    recall_sum, recall_count = 0.0, 0
    for event, zone in zip(truth.events, zones):
        zone_pred = _points_in_zone(pred, *zone)
        if zone_pred.size:
            dists = _event_distance(zone_pred, *event)
            precision_sum += float(_precision_survival(dists, zone, event).sum())
            precision_count += zone_pred.size

        truth_points = np.arange(event[0], event[1], dtype=np.int64)
        recall_count += truth_points.size
        if zone_pred.size:
            gaps = np.abs(truth_points[:, None] - zone_pred[None, :]).min(axis=1)
            recall_sum += float(_recall_survival(gaps, truth_points, zone).sum())
        else:
            recall_sum += 0.5 * truth_points.size

    undefined = precision_count == 0
    ap = 0.0 if undefined else precision_sum / precision_count
    ar = recall_sum / recall_count
    f1 = 0.0 if ap <= 0.0 or ar <= 0.0 else 2.0 * ap * ar / (ap + ar)
    return AffiliationResult(precision=ap, recall=ar, f1=f1, precision_undefined=undefined)


def point_metrics(pred_points, truth_points):
    """Classical precision / recall / F1 over binary point vectors; 0/0 -> 0."""
    pred = np.asarray(pred_points).astype(bool)
    truth = np.asarray(truth_points).astype(bool)
    if pred.shape != truth.shape:
        raise DataError("prediction / truth length mismatch")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def point_adjust(pred_points, truth: EventSet) -> np.ndarray:
    """Mark a whole truth event predicted if any of its points is; false
    positives outside truth events are left untouched."""
    adjusted = np.asarray(pred_points).astype(np.int64).copy()
    for s, e in truth:
        if adjusted[s:e].any():
            adjusted[s:e] = 1
    return adjusted


def ucr_accuracy(results: Sequence, margin: int) -> float:
    """Fraction of subdatasets whose score argmax falls within the margin of
    the single labeled event [s, e), i.e. inside [s - margin, e + margin)."""
    if not results:
        raise DataError("ucr_accuracy needs at least one subdataset")
    correct = 0
    for scores, truth in results:
        if len(truth) != 1:
            raise DataError(
                f"ucr_accuracy requires exactly one truth event per subdataset, got {len(truth)}"
            )
        (s, e), = truth.events
        peak = int(np.argmax(np.asarray(scores)))
        correct += int(s - margin <= peak < e + margin)
    return correct / len(results)


def auroc(scores, labels) -> float:
    """Threshold-free ranking quality (Mann-Whitney form, ties averaged)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    ranks[order] = np.arange(1, scores.size + 1)
    # average ranks within tied groups
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    return (ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
