"""Synthetic-anomaly generation by perturbing one random segment of a window.

One augmentation kind is applied per sample to one contiguous segment; the
window outside the segment is returned bit-identical.  Augmented windows are
treated as anomalous (label 1) by the training losses.
"""

from __future__ import annotations

from dataclasses import dataclass


import numpy as np

KINDS = ("jitter", "scale", "warp")


@dataclass
class AugmentSpec:
    """Augmentation tunables.

    kinds: enabled perturbations, sampled uniformly per window.
    segment_fraction: (lo, hi) fraction of the window to perturb.
    jitter_sigma: noise scale in units of the per-channel window std.
    scale_range: (low_band, high_band); the factor is drawn uniformly from
        one band so it never lands near 1 and the segment stays anomalous.
    warp_knots: number of random speed knots for the time remap.
    """

    kinds: tuple = ("jitter", "warp")
    segment_fraction: tuple = (0.2, 0.5)
    jitter_sigma: float = 0.1
    scale_range: tuple = ((0.1, 0.5), (2.0, 5.0))
    warp_knots: int = 4

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        if not self.kinds:
            raise ValueError("at least one augmentation kind must be enabled")
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown augmentation kinds: {sorted(unknown)}")
        lo, hi = self.segment_fraction
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"segment_fraction must satisfy 0 < lo <= hi <= 1, got {self.segment_fraction}")
        self.segment_fraction = (float(lo), float(hi))
        self.scale_range = tuple(tuple(float(x) for x in band) for band in self.scale_range)
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if self.warp_knots < 1:
            raise ValueError("warp_knots must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kinds": list(self.kinds),
            "segment_fraction": list(self.segment_fraction),
            "jitter_sigma": self.jitter_sigma,
            "scale_range": [list(band) for band in self.scale_range],
            "warp_knots": self.warp_knots,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        return cls(**d)


def _warp_times(length: int, speeds: np.ndarray) -> np.ndarray:
    """Piecewise-linear time remap: knot speeds -> normalized cumulative times.

    Endpoints map to themselves exactly, so segment boundaries are preserved.
    """
    positions = np.arange(length, dtype=np.float64)
    knots = np.linspace(0.0, length - 1, num=len(speeds))
    speed = np.interp(positions, knots, speeds)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]))))
    return cum * (length - 1) / cum[-1]


def augment(window: np.ndarray, spec: AugmentSpec, rng: np.random.Generator):
    """Perturb one random segment of a [D x T] window.

    Returns (augmented window, (start, end)) with the perturbation confined
    to [start, end); outside it the output is bit-identical to the input.
    """
    window = np.asarray(window)
    channels, length = window.shape
    if length < 4:
        raise ValueError(f"window too short to augment (T={length} < 4)")

    kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
    frac = float(rng.uniform(*spec.segment_fraction))
    seg_len = int(np.clip(round(frac * length), 1, length))
    start = int(rng.integers(0, length - seg_len + 1))
    end = start + seg_len

    out = window.copy()
    segment = out[:, start:end]

    if kind == "jitter":
        sigma = spec.jitter_sigma * window.std(axis=1, keepdims=True)
        noise = rng.standard_normal((channels, seg_len)) * sigma
        out[:, start:end] = (segment + noise).astype(window.dtype)
    elif kind == "scale":
        band = spec.scale_range[int(rng.integers(len(spec.scale_range)))]
        factor = float(rng.uniform(*band))
        out[:, start:end] = (segment * factor).astype(window.dtype)
    elif kind == "warp":
        speeds = rng.uniform(0.5, 2.0, size=spec.warp_knots)
        if seg_len >= 2 and spec.warp_knots >= 2:
            times = _warp_times(seg_len, speeds)
            grid = np.arange(seg_len, dtype=np.float64)
            warped = np.stack([np.interp(times, grid, segment[c]) for c in range(channels)])
            out[:, start:end] = warped.astype(window.dtype)
        # a < 2 sample segment (or a single knot) admits no remap: identity
    else:  # pragma: no cover - guarded by AugmentSpec validation
        raise ValueError(f"unknown augmentation kind {kind!r}")

    return out, (start, end)


def augment_batch(windows: np.ndarray, spec: AugmentSpec, rng: np.random.Generator):
    """Augment each window of a [N x D x T] batch with its own derived stream.

    Per-item child streams keep the result independent of processing order.
    """
    streams = rng.spawn(len(windows))
    augmented = np.empty_like(windows)
    segments = []
    for i, (win, stream) in enumerate(zip(windows, streams)):
        augmented[i], seg = augment(win, spec, stream)
        segments.append(seg)
    return augmented, segments
