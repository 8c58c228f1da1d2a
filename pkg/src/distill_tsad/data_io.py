"""Dataset ingestion (UCR-style univariate files, multivariate CSV) and
synthetic series generation for desk-scale experiments."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path


import numpy as np

from .core import FLOAT, DataError, TimeSeriesDataset

_UCR_NAME = re.compile(
    r"^(?P<id>[^_]+)_UCR_Anomaly_(?P<name>.+)_(?P<train_end>\d+)_"
    r"(?P<anom_start>\d+)_(?P<anom_end>\d+)\.(txt|csv)$"
)


@dataclass
class UcrMeta:
    """Filename-encoded metadata of a UCR archive entry.

    anomaly_start / anomaly_end are stored 0-based half-open regardless of
    the archive's index base.
    """

    id: str
    name: str
    train_end: int
    anomaly_start: int
    anomaly_end: int

    def validate(self, length: int) -> None:
        if not 0 < self.train_end < self.anomaly_start:
            raise DataError(
                f"UCR invariant violated: need 0 < train_end < anomaly_start, "
                f"got train_end={self.train_end}, anomaly_start={self.anomaly_start}"
            )
        if not self.anomaly_start < self.anomaly_end <= length:
            raise DataError(
                f"UCR invariant violated: anomaly [{self.anomaly_start}, "
                f"{self.anomaly_end}) outside series of length {length}"
            )


def parse_ucr_name(filename: str, index_base: int = 1) -> UcrMeta:
    match = _UCR_NAME.match(filename)
    if not match:
        raise DataError(
            f"filename {filename!r} does not match "
            "'<id>_UCR_Anomaly_<name>_<trainEnd>_<anomStart>_<anomEnd>.<txt|csv>'"
        )
    if index_base not in (0, 1):
        raise DataError(f"index_base must be 0 or 1, got {index_base}")
    start = int(match["anom_start"])
    end = int(match["anom_end"])
    if index_base == 1:
        start, end = start - 1, end          # 1-based inclusive -> half-open
    else:
        end = end + 1                        # 0-based inclusive -> half-open
    return UcrMeta(id=match["id"], name=match["name"],
                   train_end=int(match["train_end"]),
                   anomaly_start=start, anomaly_end=end)


def _read_single_column(path: Path) -> np.ndarray:
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                value = float(line)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: not a number: {line!r}") from exc
            if not math.isfinite(value):
                raise DataError(f"{path}:{lineno}: non-finite value {line!r}")
            values.append(value)
    if not values:
        raise DataError(f"{path}: empty value file")
    return np.asarray(values, dtype=FLOAT)


def load_ucr(path, index_base: int = 1):
    """Load a UCR archive file into (train, test) datasets.

    The filename carries the train/test boundary and the single labeled
    anomaly; test labels are shifted to test-local indices.
    """
    path = Path(path)
    meta = parse_ucr_name(path.name, index_base=index_base)
    values = _read_single_column(path)
    meta.validate(len(values))
    train = TimeSeriesDataset(values=values[: meta.train_end][None, :],
                              name=meta.name, split="train")
    test_values = values[meta.train_end :]
    labels = np.zeros(len(test_values), dtype=np.int64)
    labels[meta.anomaly_start - meta.train_end : meta.anomaly_end - meta.train_end] = 1
    test = TimeSeriesDataset(values=test_values[None, :], labels=labels,
                             name=meta.name, split="test")
    return train, test


def load_multivariate(values_csv, labels_csv=None, name: str = "",
                      split: str = "test") -> TimeSeriesDataset:
    """Load a header-row CSV of one timestep per row, channels as columns,
    with an optional aligned single-column 0/1 label CSV."""
    values_csv = Path(values_csv)
    rows = []
    with open(values_csv, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{values_csv}: empty CSV") from None
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{values_csv}:{lineno}: expected {width} columns, got {len(row)}")
            parsed = []
            for col, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError as exc:
                    raise DataError(
                        f"{values_csv}: row {lineno}, column {col}: not a number: {cell!r}"
                    ) from exc
            rows.append(parsed)
    if not rows:
        raise DataError(f"{values_csv}: no data rows")
    values = np.asarray(rows, dtype=FLOAT).T          # [D x L]

    labels = None
    if labels_csv is not None:
        labels = _read_labels_column(Path(labels_csv))
        if len(labels) != values.shape[1]:
            raise DataError(
                f"{labels_csv}: {len(labels)} label rows vs {values.shape[1]} value rows"
            )
    return TimeSeriesDataset(values=values, labels=labels,
                             name=name or values_csv.stem, split=split)


def _read_labels_column(path: Path) -> np.ndarray:
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            cell = line.strip()
            if not cell:
                continue
            if lineno == 1 and cell not in ("0", "1"):
                continue                               # header row
            if cell not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: labels must be 0 or 1, got {cell!r}")
            labels.append(int(cell))
    if not labels:
        raise DataError(f"{path}: empty label file")
    return np.asarray(labels, dtype=np.int64)


@dataclass
class AnomalyInjection:
    kind: str                                          # spike | level_shift | shapelet
    start: int
    length: int
    magnitude: float

    KINDS = ("spike", "level_shift", "shapelet")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DataError(f"unknown anomaly kind {self.kind!r}")
        if self.length < 1 or self.start < 0:
            raise DataError(f"bad anomaly span start={self.start}, length={self.length}")

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass
class SynthSpec:
    """Recipe for a synthetic labeled series."""

    base: str = "sine"                                 # sine | mixed
    length: int = 4000
    channels: int = 1
    anomalies: list = field(default_factory=list)
    period: float = 50.0

    def __post_init__(self):
        if self.base not in ("sine", "mixed"):
            raise DataError(f"unknown base signal {self.base!r}")
        if self.length < 1 or self.channels < 1:
            raise DataError("length and channels must be >= 1")
        self.anomalies = [
            a if isinstance(a, AnomalyInjection) else AnomalyInjection(**a)
            for a in self.anomalies
        ]
        spans = sorted((a.start, a.end) for a in self.anomalies)
        for (s, e) in spans:
            if e > self.length:
                raise DataError(f"anomaly [{s}, {e}) outside series of length {self.length}")
        for (_, prev_end), (start, _) in zip(spans, spans[1:]):
            if start < prev_end:
                raise DataError("overlapping injections")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d.pop("train_end", None)                       # pipeline-level keys
        d.pop("seed", None)
        return cls(**d)


def synth_dataset(spec, rng: np.random.Generator, name: str = "synth",
                  split: str = "test") -> TimeSeriesDataset:
    """Deterministic synthetic series; labels exactly mark injected spans."""
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    t = np.arange(spec.length, dtype=np.float64)
    values = np.empty((spec.channels, spec.length), dtype=np.float64)
    for c in range(spec.channels):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        base = np.sin(2.0 * np.pi * t / spec.period + phase)
        if spec.base == "mixed":
            phase2 = rng.uniform(0.0, 2.0 * np.pi)
            base = base + 0.5 * np.sin(2.0 * np.pi * t / (spec.period / 3.0) + phase2)
            base = base + 0.05 * rng.standard_normal(spec.length)
        values[c] = base

    labels = np.zeros(spec.length, dtype=np.int64)
    for anomaly in spec.anomalies:
        s, e, m = anomaly.start, anomaly.end, anomaly.magnitude
        span = np.arange(e - s, dtype=np.float64)
        if anomaly.kind == "spike":
            bump = np.sin(np.pi * (span + 1.0) / (e - s + 1.0))
            values[:, s:e] += m * bump
        elif anomaly.kind == "level_shift":
            values[:, s:e] += m
        else:  # shapelet: replace the span with a period-4 triangle wave
            tri = 2.0 * np.abs((span / 4.0) % 1.0 - 0.5) * 2.0 - 1.0
            values[:, s:e] = m * tri
        labels[s:e] = 1
    return TimeSeriesDataset(values=values.astype(FLOAT), labels=labels,
                             name=name, split=split)


def split_dataset(dataset: TimeSeriesDataset, train_end: int):
    """Cut a labeled series into an unlabeled train prefix and a test rest."""
    if not 0 < train_end < dataset.length:
        raise DataError(
            f"train_end must lie inside the series, got {train_end} of {dataset.length}"
        )
    train = TimeSeriesDataset(values=dataset.values[:, :train_end].copy(),
                              name=dataset.name, split="train")
    labels = None if dataset.labels is None else dataset.labels[train_end:].copy()
    test = TimeSeriesDataset(values=dataset.values[:, train_end:].copy(),
                             labels=labels, name=dataset.name, split="test")
    return train, test


def synth_pair(spec_dict: dict, seed: int):
    """Build (train, test) from a synth spec dict with a 'train_end' key
    (default: half the series)."""
    train_end = int(spec_dict.get("train_end", int(spec_dict.get("length", 4000)) // 2))
    dataset = synth_dataset(SynthSpec.from_dict(spec_dict), np.random.default_rng(seed))
    return split_dataset(dataset, train_end)
