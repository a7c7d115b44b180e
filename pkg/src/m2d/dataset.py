"""Supervised example construction.

Order of operations for one session and horizon: shift the label series,
split it into train/val/test index intervals, cut windows strictly inside
each interval, aggregate window labels, keep the three modelled actions.
Oversampling touches the training set only.
"""

from __future__ import annotations

import enum
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, EmptyResultError, FileError, InvalidInputError
from .kinlab import MODEL_ACTIONS, N_CLASSES, OUT_OF_RANGE, ActionLabel, LabelSeries
from .synthgen import EegRecording

REJECTED = kernels.REJECTED

WINDOW_LENGTHS_S = (0.5, 1.0, 2.0, 5.0)
OVERLAPS = (0.0, 0.5)


class Aggregation(enum.Enum):
    MAJORITY = "Majority"
    REJECT = "Reject"


class SplitStrategy(enum.Enum):
    TEMPORAL_PLAIN = "TemporalPlain"
    LABEL_STRATIFIED_TEMPORAL = "LabelStratifiedTemporal"


@dataclass(frozen=True)
class WindowSpec:
    length_s: float = 1.0
    overlap: float = 0.5
    aggregation: Aggregation = Aggregation.REJECT

    def __post_init__(self):
        if not 0 <= self.overlap < 1:
            raise ConfigError(f"window overlap must lie in [0, 1), got {self.overlap}")
        if not self.length_s > 0:
            raise ConfigError(f"window length must be > 0, got {self.length_s}")

    def width(self, fs: float) -> int:
        w = int(round(self.length_s * fs))
        if w < 16:
            raise ConfigError(f"window of {self.length_s} s at {fs} Hz has {w} < 16 samples")
        return w

    def step(self, fs: float) -> int:
        return max(1, math.floor(self.width(fs) * (1.0 - self.overlap)))


@dataclass(frozen=True)
class SplitConfig:
    strategy: SplitStrategy = SplitStrategy.LABEL_STRATIFIED_TEMPORAL
    train_frac: float = 0.7
    val_frac_of_train: float = 0.15
    oversample: bool = True
    sampler_seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_frac < 1:
            raise ConfigError(f"train_frac must lie in (0, 1), got {self.train_frac}")
        if not 0 <= self.val_frac_of_train <= 0.5:
            raise ConfigError(f"val_frac_of_train must lie in [0, 0.5], got {self.val_frac_of_train}")


@dataclass(frozen=True)
class Example:
    window: np.ndarray
    label: ActionLabel
    horizon_ms: int
    session_id: int
    start_time: float


@dataclass(eq=False)
class ExampleSet:
    """Columnar collection of examples sharing channel layout and width."""

    windows: np.ndarray  # (N, C, W) float32
    labels: np.ndarray  # (N,) int8
    horizon_ms: np.ndarray  # (N,) uint16
    session_id: np.ndarray  # (N,) uint32
    start_time: np.ndarray  # (N,) float64
    channel_names: tuple[str, ...] = ()
    start_index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float32)
        n = len(self.windows)
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(n)
        self.horizon_ms = np.asarray(self.horizon_ms, dtype=np.uint16).reshape(n)
        self.session_id = np.asarray(self.session_id, dtype=np.uint32).reshape(n)
        self.start_time = np.asarray(self.start_time, dtype=np.float64).reshape(n)
        if self.windows.ndim != 3:
            raise InvalidInputError(f"windows must be (N, C, W), got shape {self.windows.shape}")
        self.channel_names = tuple(self.channel_names)
        if self.start_index is not None:
            self.start_index = np.asarray(self.start_index, dtype=np.int64).reshape(n)

    @classmethod
    def empty(cls, n_channels: int, width: int, channel_names=()) -> "ExampleSet":
        return cls(np.zeros((0, n_channels, width), np.float32), [], [], [], [], channel_names, np.zeros(0))

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Example:
        return Example(
            self.windows[i], ActionLabel(int(self.labels[i])), int(self.horizon_ms[i]),
            int(self.session_id[i]), float(self.start_time[i]),
        )  # fmt: skip

    @property
    def shape(self) -> tuple[int, int]:
        return self.windows.shape[1], self.windows.shape[2]

    def take(self, idx) -> "ExampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return ExampleSet(
            self.windows[idx], self.labels[idx], self.horizon_ms[idx], self.session_id[idx],
            self.start_time[idx], self.channel_names,
            None if self.start_index is None else self.start_index[idx],
        )  # fmt: skip

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels.astype(np.int64), minlength=N_CLASSES)[:N_CLASSES]

    @staticmethod
    def concat(sets: Sequence["ExampleSet"]) -> "ExampleSet":
        sets = list(sets)
        if not sets:
            raise EmptyResultError("nothing to concatenate")
        with_idx = all(s.start_index is not None for s in sets)
        return ExampleSet(
            np.concatenate([s.windows for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.horizon_ms for s in sets]),
            np.concatenate([s.session_id for s in sets]),
            np.concatenate([s.start_time for s in sets]),
            sets[0].channel_names,
            np.concatenate([s.start_index for s in sets]) if with_idx else None,
        )


# -- horizon shift ----------------------------------------------------------


def horizon_samples(horizon_ms: float, fs: float) -> int:
    """Sample offset for a horizon, rounding halves away from zero."""
    if horizon_ms < 0:
        raise ConfigError(f"horizon must be >= 0 ms, got {horizon_ms}")
    return int(math.floor(horizon_ms * fs / 1000.0 + 0.5))


def shift_horizon(series: LabelSeries, horizon_ms: float, fs: float) -> LabelSeries:
    """Future-intention labels: output[i] = input[i + n]; the last n become out of range."""
    n = horizon_samples(horizon_ms, fs)
    if n >= len(series):
        raise EmptyResultError(f"horizon {horizon_ms} ms ({n} samples) leaves no labels in a series of {len(series)}")
    labels = np.full(len(series), OUT_OF_RANGE, dtype=np.int8)
    labels[: len(series) - n] = series.labels[n:]
    return LabelSeries(series.timestamps, labels)


# -- windowing --------------------------------------------------------------


def aggregate(window_labels, rule: Aggregation) -> ActionLabel | None:
    """Single-window label aggregation; None means the window is rejected."""
    lab = np.asarray(window_labels, dtype=np.int8)
    if lab.size == 0:
        raise InvalidInputError("cannot aggregate an empty label window")
    out = int(kernels.aggregate_windows(lab, np.zeros(1, np.int64), len(lab), rule is Aggregation.MAJORITY)[0])
    if out == OUT_OF_RANGE:
        raise InvalidInputError("window contains out-of-range labels")
    return None if out == REJECTED else ActionLabel(out)


@dataclass(frozen=True, eq=False)
class Segmentation:
    """Window starts (sample indices) and their aggregated labels.

    ``labels`` holds an ActionLabel value or REJECTED; windows that touch
    out-of-range labels are already dropped.
    """

    starts: np.ndarray
    labels: np.ndarray
    width: int
    n_candidates: int

    @property
    def kept(self) -> np.ndarray:
        return self.labels != REJECTED

    @property
    def rejected_fraction(self) -> float:
        return float(np.mean(~self.kept)) if len(self.labels) else 0.0


def window_starts(n_samples: int, width: int, step: int, offset: int = 0) -> np.ndarray:
    if n_samples < width:
        return np.zeros(0, dtype=np.int64)
    return offset + np.arange(0, n_samples - width + 1, step, dtype=np.int64)


def usable_length(labels: np.ndarray) -> int:
    """Samples before the out-of-range tail left by a horizon shift."""
    valid = np.flatnonzero(labels != OUT_OF_RANGE)
    return int(valid[-1]) + 1 if len(valid) else 0


def segment_labels(labels: np.ndarray, spec: WindowSpec, fs: float, lo: int = 0, hi: int | None = None) -> Segmentation:
    """Window the label interval [lo, hi) and aggregate each window."""
    labels = np.asarray(labels, dtype=np.int8)
    hi = len(labels) if hi is None else hi
    width, step = spec.width(fs), spec.step(fs)
    starts = window_starts(hi - lo, width, step, lo)
    agg = kernels.aggregate_windows(labels, starts, width, spec.aggregation is Aggregation.MAJORITY)
    keep = agg != OUT_OF_RANGE
    return Segmentation(starts[keep], agg[keep], width, len(starts))


def segment(eeg: EegRecording, labels: LabelSeries, spec: WindowSpec):
    """Cut the recording into windows and aggregate their labels.

    Returns a list of ``(window, per_sample_labels, start_time)`` for windows
    that are not rejected, plus the full :class:`Segmentation`.
    """
    if len(labels) != eeg.n_samples:
        raise InvalidInputError(f"{len(labels)} labels for {eeg.n_samples} EEG samples")
    t_usable = usable_length(labels.labels)
    width = spec.width(eeg.fs)
    if t_usable < width:
        raise EmptyResultError(f"{t_usable} usable samples is fewer than the window width {width}")
    seg = segment_labels(labels.labels, spec, eeg.fs, 0, t_usable)
    out = [
        (eeg.data[:, s : s + width], labels.labels[s : s + width], float(eeg.timestamps[s]))
        for s, lab in zip(seg.starts, seg.labels)
        if lab != REJECTED
    ]
    return out, seg


def restrict_actions(examples: ExampleSet) -> ExampleSet:
    """Drop Stopped and Reverse examples, keeping order."""
    keep = np.isin(examples.labels, [int(a) for a in MODEL_ACTIONS])
    if not np.any(keep):
        raise EmptyResultError("no Forward/TurnLeft/TurnRight examples remain")
    return examples.take(np.flatnonzero(keep))


# -- splitting --------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    """Half-open sample-index intervals per partition."""

    train: tuple[tuple[int, int], ...]
    val: tuple[tuple[int, int], ...]
    test: tuple[tuple[int, int], ...]

    def parts(self) -> dict[str, tuple[tuple[int, int], ...]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def class_runs(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Maximal runs of one modelled class as (label, start, stop)."""
    labels = np.asarray(labels)
    modelled = np.isin(labels, [int(a) for a in MODEL_ACTIONS])
    marked = np.where(modelled, labels.astype(np.int64), -99)
    change = np.flatnonzero(np.diff(marked)) + 1
    bounds = np.concatenate(([0], change, [len(labels)]))
    return [
        (int(marked[a]), int(a), int(b))
        for a, b in zip(bounds[:-1], bounds[1:])
        if marked[a] != -99
    ]


def _take_until(durations: Sequence[int], target: float) -> int:
    """Number of leading items whose cumulative sum first reaches ``target``."""
    total = 0
    for i, d in enumerate(durations):
        if total >= target - 1e-9:
            return i
        total += d
    return len(durations)


def stratified_temporal_split(labels: LabelSeries | np.ndarray, cfg: SplitConfig) -> Split:
    """Per-class chronological chunk assignment, or a plain temporal cut."""
    lab = labels.labels if isinstance(labels, LabelSeries) else np.asarray(labels, dtype=np.int8)
    if cfg.strategy is SplitStrategy.TEMPORAL_PLAIN:
        t = usable_length(lab)
        cut = int(math.floor(cfg.train_frac * t))
        val_start = cut - int(math.floor(cfg.val_frac_of_train * cut))
        train = ((0, val_start),) if val_start > 0 else ()
        val = ((val_start, cut),) if cut > val_start else ()
        test = ((cut, t),) if t > cut else ()
        return Split(train, val, test)

    runs = class_runs(lab)
    train, val, test = [], [], []
    for cls in MODEL_ACTIONS:
        chunks = [(a, b) for c, a, b in runs if c == int(cls)]
        if not chunks:
            continue
        if len(chunks) < 3:
            warnings.warn(
                f"class {cls.short} has only {len(chunks)} temporal chunks; split granularity is coarse",
                RuntimeWarning,
                stacklevel=2,
            )
        durations = [b - a for a, b in chunks]
        n_train = _take_until(durations, cfg.train_frac * sum(durations))
        train_chunks, test_chunks = chunks[:n_train], chunks[n_train:]
        n_val = 0
        if cfg.val_frac_of_train > 0 and len(train_chunks) > 1:
            tail = [b - a for a, b in reversed(train_chunks)]
            train_total = sum(tail)
            n_val = min(_take_until(tail, cfg.val_frac_of_train * train_total), len(train_chunks) - 1)
        cut = len(train_chunks) - n_val
        train.extend(train_chunks[:cut])
        val.extend(train_chunks[cut:])
        test.extend(test_chunks)
    return Split(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)))


# -- example building -------------------------------------------------------


def windows_in_intervals(
    eeg: EegRecording,
    labels: np.ndarray,
    intervals: Iterable[tuple[int, int]],
    spec: WindowSpec,
    horizon_ms: int,
    session_id: int,
) -> tuple[ExampleSet, int, int]:
    """Examples from windows lying wholly inside one interval each.

    Returns the restricted examples plus (candidate, rejected) window counts.
    """
    width = spec.width(eeg.fs)
    starts, labs = [], []
    n_cand = n_rej = 0
    for lo, hi in intervals:
        seg = segment_labels(labels, spec, eeg.fs, lo, hi)
        n_cand += len(seg.labels)
        n_rej += int(np.count_nonzero(~seg.kept))
        starts.append(seg.starts[seg.kept])
        labs.append(seg.labels[seg.kept])
    starts = np.concatenate(starts) if starts else np.zeros(0, np.int64)
    labs = np.concatenate(labs) if labs else np.zeros(0, np.int8)
    keep = np.isin(labs, [int(a) for a in MODEL_ACTIONS])
    starts, labs = starts[keep], labs[keep]
    order = np.argsort(starts, kind="stable")
    starts, labs = starts[order], labs[order]
    if len(starts):
        idx = starts[:, None] + np.arange(width)[None, :]
        windows = np.ascontiguousarray(eeg.data[:, idx].transpose(1, 0, 2), dtype=np.float32)
    else:
        windows = np.zeros((0, eeg.n_channels, width), np.float32)
    n = len(starts)
    out = ExampleSet(
        windows, labs, np.full(n, horizon_ms), np.full(n, session_id), eeg.timestamps[starts],
        eeg.channel_names, starts,
    )  # fmt: skip
    return out, n_cand, n_rej


@dataclass
class BuildStats:
    candidates: int = 0
    rejected: int = 0
    session_windows: int = 0
    session_rejected: int = 0
    counts: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def rejected_fraction(self) -> float:
        return self.rejected / self.candidates if self.candidates else 0.0

    @property
    def session_rejected_fraction(self) -> float:
        return self.session_rejected / self.session_windows if self.session_windows else 0.0


def build_session(
    eeg: EegRecording,
    labels: LabelSeries,
    spec: WindowSpec,
    split_cfg: SplitConfig,
    horizon_ms: int,
    session_id: int,
) -> tuple[dict[str, ExampleSet], Split, BuildStats]:
    """Train/val/test examples for one preprocessed session at one horizon."""
    if len(labels) != eeg.n_samples:
        raise InvalidInputError(f"{len(labels)} labels for {eeg.n_samples} EEG samples")
    shifted = shift_horizon(labels, horizon_ms, eeg.fs)
    split = stratified_temporal_split(shifted, split_cfg)
    stats = BuildStats()
    whole = segment_labels(shifted.labels, spec, eeg.fs, 0, usable_length(shifted.labels))
    stats.session_windows = len(whole.labels)
    stats.session_rejected = int(np.count_nonzero(~whole.kept))
    parts = {}
    for name, intervals in split.parts().items():
        ex, n_cand, n_rej = windows_in_intervals(eeg, shifted.labels, intervals, spec, horizon_ms, session_id)
        parts[name] = ex
        stats.candidates += n_cand
        stats.rejected += n_rej
        stats.counts[name] = ex.class_counts()
    return parts, split, stats


def oversample(train: ExampleSet, seed: int) -> ExampleSet:
    """Duplicate minority-class examples at random until all classes match the majority."""
    if len(train) == 0:
        raise EmptyResultError("cannot oversample an empty training set")
    rng = np.random.default_rng(seed)
    counts = train.class_counts()
    target = counts.max()
    extra = []
    for cls in range(N_CLASSES):
        members = np.flatnonzero(train.labels == cls)
        if 0 < len(members) < target:
            extra.append(rng.choice(members, size=target - len(members), replace=True))
    if not extra:
        return train
    return train.take(np.concatenate([np.arange(len(train))] + extra))


def select_channels(examples: ExampleSet, subset: Sequence[str]) -> ExampleSet:
    names = list(examples.channel_names)
    idx = []
    for ch in subset:
        if ch not in names:
            raise ConfigError(f"unknown channel {ch!r}; available: {', '.join(names)}")
        idx.append(names.index(ch))
    return ExampleSet(
        examples.windows[:, idx, :], examples.labels, examples.horizon_ms, examples.session_id,
        examples.start_time, tuple(subset), examples.start_index,
    )  # fmt: skip


# -- cache file -------------------------------------------------------------

CACHE_MAGIC = b"M2D1"
_HEADER = struct.Struct("<4sIII")
_RECORD_HEAD = np.dtype([("label", "u1"), ("horizon_ms", "<u2"), ("session_id", "<u4"), ("start_time", "<f8")])


def write_cache(examples: ExampleSet, path) -> Path:
    """Binary dataset cache: magic, C, W, count, then packed per-example records."""
    path = Path(path)
    n = len(examples)
    c, w = examples.shape
    rec = np.dtype(_RECORD_HEAD.descr + [("values", "<f4", (c * w,))])
    arr = np.zeros(n, dtype=rec)
    arr["label"] = examples.labels
    arr["horizon_ms"] = examples.horizon_ms
    arr["session_id"] = examples.session_id
    arr["start_time"] = examples.start_time
    arr["values"] = examples.windows.reshape(n, c * w)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(CACHE_MAGIC, c, w, n))
            fh.write(arr.tobytes())
    except OSError as exc:
        raise FileError(f"cannot write dataset cache {path}: {exc}") from exc
    return path


def read_cache(path, channel_names: Sequence[str] = ()) -> ExampleSet:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FileError(f"cannot read dataset cache {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise InvalidInputError(f"{path}: truncated dataset cache")
    magic, c, w, n = _HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}, expected {CACHE_MAGIC!r}")
    rec = np.dtype(_RECORD_HEAD.descr + [("values", "<f4", (c * w,))])
    if len(raw) != _HEADER.size + n * rec.itemsize:
        raise InvalidInputError(f"{path}: size does not match {n} examples of {c}x{w}")
    arr = np.frombuffer(raw, dtype=rec, offset=_HEADER.size, count=n)
    names = tuple(channel_names) if len(channel_names) == c else ()
    return ExampleSet(
        arr["values"].reshape(n, c, w).copy(), arr["label"].astype(np.int8), arr["horizon_ms"],
        arr["session_id"], arr["start_time"], names,
    )  # fmt: skip
