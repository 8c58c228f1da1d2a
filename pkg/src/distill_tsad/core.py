"""Domain types, configuration, and the deterministic RNG contract.

Every stochastic operation in the package draws from an explicitly passed
`numpy.random.Generator`; nothing touches global RNG state.  All signal
arrays are float32; losses and metrics accumulate in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .augment import AugmentSpec

FLOAT = np.float32

# Representations are plain float32 vectors of length feature_dim.
Representation = np.ndarray


class DataError(Exception):
    """Malformed or inconsistent input data (files, shapes, labels)."""


class NumericError(Exception):
    """Numerical failure during training or scoring (NaN loss etc.)."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream; identical seeds yield identical streams."""
    return np.random.default_rng(seed)


def spawn_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive n independent child streams (order-independent consumption)."""
    return rng.spawn(n)


@dataclass
class TimeSeriesDataset:
    """A multichannel series with optional per-timestep binary labels.

    values: [D channels x L timesteps], float32, finite.
    labels: [L] with 1 marking anomalous timesteps; absent for train splits.
    """

    values: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = ""
    split: str = "train"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=FLOAT)
        if self.values.ndim == 1:
            self.values = self.values[None, :]
        if self.values.ndim != 2:
            raise DataError(f"values must be [D x L], got shape {self.values.shape}")
        d, length = self.values.shape
        if d < 1 or length < 1:
            raise DataError(f"need D >= 1 and L >= 1, got D={d}, L={length}")
        if not np.isfinite(self.values).all():
            raise DataError(f"non-finite values in dataset {self.name!r}")
        if self.split not in ("train", "test"):
            raise DataError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (length,):
                raise DataError(
                    f"labels length {self.labels.shape} != series length {length}"
                )
            if not np.isin(self.labels, (0, 1)).all():
                raise DataError("labels must be binary")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowBatch:
    """Fixed-length windows cut from one series, with provenance.

    windows: [N x D x T]; starts: [N] window start indices; window-level
    label is 1 iff any covered timestep label is 1.
    """

    windows: np.ndarray
    starts: np.ndarray
    stride: int
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=FLOAT)
        self.starts = np.asarray(self.starts, dtype=np.int64)
        if self.windows.ndim != 3:
            raise DataError(f"windows must be [N x D x T], got {self.windows.shape}")
        if self.starts.shape != (self.windows.shape[0],):
            raise DataError("starts must have one entry per window")
        if self.stride < 1:
            raise DataError(f"stride must be >= 1, got {self.stride}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.windows.shape[0],):
                raise DataError("window labels must have one entry per window")

    @property
    def count(self) -> int:
        return self.windows.shape[0]

    @property
    def window_size(self) -> int:
        return self.windows.shape[2]


@dataclass
class Config:
    """All tunables of the pipeline; round-trips losslessly through JSON."""

    window_size: int = 32
    patch_size: int = 8
    patch_stride: int = 8
    feature_dim: int = 64
    student_layers: int = 3
    teacher_layers: int = 6
    prototype_count: int = 32
    head_count: int = 8
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 100
    patience: int = 10
    contrastive_weight: float = 0.1
    augmentation: AugmentSpec = field(default_factory=AugmentSpec)
    threshold_quantile: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentSpec.from_dict(self.augmentation)
        counts = {
            "window_size": self.window_size,
            "patch_size": self.patch_size,
            "patch_stride": self.patch_stride,
            "feature_dim": self.feature_dim,
            "student_layers": self.student_layers,
            "teacher_layers": self.teacher_layers,
            "prototype_count": self.prototype_count,
            "head_count": self.head_count,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "patience": self.patience,
        }
        for name, value in counts.items():
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        if not 0.0 < self.threshold_quantile < 1.0:
            raise ValueError(
                f"threshold_quantile must lie in (0, 1), got {self.threshold_quantile}"
            )
        if self.contrastive_weight < 0.0:
            raise ValueError("contrastive_weight must be >= 0")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if self.patch_size > self.window_size:
            raise ValueError("patch_size must not exceed window_size")

    @property
    def patch_count(self) -> int:
        """Patches per window; the trailing remainder shorter than P is dropped."""
        return (self.window_size - self.patch_size) // self.patch_stride + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentation"] = self.augmentation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        d = dict(d)
        if "augmentation" in d:
            d["augmentation"] = AugmentSpec.from_dict(d["augmentation"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Config":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())
