"""Windowing, per-window instance normalization, and patching.

These operations are shared by the student and teacher paths.  They accept
numpy arrays or torch tensors over the last axis, so the encoders reuse the
exact same formulas inside their differentiable forward passes.
"""

from __future__ import annotations

from dataclasses import dataclass


import numpy as np
import torch

from .core import DataError, TimeSeriesDataset, WindowBatch

STD_EPS = 1e-5


@dataclass
class NormStats:
    """Per-channel mean/std of one window, reusable on a paired signal."""

    mean: np.ndarray
    std: np.ndarray


@dataclass
class PatchSequence:
    """Contiguous sub-sequences of a window: patches [... x n x P]."""

    patches: np.ndarray

    @property
    def n(self) -> int:
        return self.patches.shape[-2]


def window(series: TimeSeriesDataset, size: int, stride: int) -> WindowBatch:
    """Cut fixed-length windows; the last window ends inside the series.

    Training typically uses stride == size (non-overlapping); scoring uses
    stride 1 so every timestep is covered by all windows containing it.
    """
    if size > series.length:
        raise DataError(
            f"window longer than series (T={size} > L={series.length})"
        )
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    starts = np.arange(0, series.length - size + 1, stride, dtype=np.int64)
    view = np.lib.stride_tricks.sliding_window_view(series.values, size, axis=1)
    windows = view[:, starts].transpose(1, 0, 2).copy()
    labels = None
    if series.labels is not None:
        label_view = np.lib.stride_tricks.sliding_window_view(series.labels, size)
        labels = label_view[starts].any(axis=1).astype(np.int64)
    return WindowBatch(windows=windows, starts=starts, stride=stride, labels=labels)


def instance_normalize(win):
    """Per-channel z-score over the time axis; constant channels map to zero.

    Returns (normalized, NormStats).  The std is guarded at 1e-5, and the
    stats are returned so a paired signal (the selected prototype) can be
    normalized with the same parameters.
    """
    if isinstance(win, torch.Tensor):
        mean = win.mean(dim=-1)
        std = win.std(dim=-1, correction=0).clamp_min(STD_EPS)
        out = (win - mean.unsqueeze(-1)) / std.unsqueeze(-1)
        return out, NormStats(mean=mean, std=std)
    win = np.asarray(win)
    mean = win.mean(axis=-1, dtype=np.float64)
    std = np.maximum(win.std(axis=-1, dtype=np.float64), STD_EPS)
    out = ((win - mean[..., None]) / std[..., None]).astype(win.dtype)
    return out, NormStats(mean=mean, std=std)


def normalize_with(win, stats: NormStats):
    """Apply another window's normalization parameters to this one."""
    if isinstance(win, torch.Tensor):
        return (win - stats.mean.unsqueeze(-1)) / stats.std.unsqueeze(-1)
    win = np.asarray(win)
    return ((win - stats.mean[..., None]) / stats.std[..., None]).astype(win.dtype)


def patch(win, size: int, stride: int) -> PatchSequence:
    """Split the time axis into length-P slices; a short remainder is dropped."""
    length = win.shape[-1]
    if size > length:
        raise DataError(f"patch longer than window (P={size} > T={length})")
    if stride < 1:
        raise DataError(f"patch stride must be >= 1, got {stride}")
    if isinstance(win, torch.Tensor):
        return PatchSequence(patches=win.unfold(-1, size, stride))
    win = np.asarray(win)
    view = np.lib.stride_tricks.sliding_window_view(win, size, axis=-1)
    return PatchSequence(patches=view[..., ::stride, :].copy())
