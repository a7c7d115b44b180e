"""Motion quantities from vehicle kinematics and rule-based action labels."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import (
    ConfigError,
    EstimationError,
    FileError,
    InvalidInputError,
    UndefinedDirectionError,
)

TWO_PI = 2.0 * math.pi

DEFAULT_V_TH = 0.5
DEFAULT_OMEGA_TH = 0.05

KINEMATICS_HEADER = ("t", "vx", "vy", "psi", "psi_dot")


class ActionLabel(enum.IntEnum):
    """Discrete driving action.

    The first three values double as model class indices.
    """

    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOPPED = 3
    REVERSE = 4

    @property
    def short(self) -> str:
        return _SHORT_NAMES[self]

    @classmethod
    def parse(cls, text: str) -> "ActionLabel":
        key = text.strip().replace("-", "").replace("_", "").lower()
        try:
            return _BY_NAME[key]
        except KeyError:
            raise InvalidInputError(f"unknown action label {text!r}") from None


_SHORT_NAMES = {
    ActionLabel.FORWARD: "Forward",
    ActionLabel.TURN_LEFT: "TurnLeft",
    ActionLabel.TURN_RIGHT: "TurnRight",
    ActionLabel.STOPPED: "Stopped",
    ActionLabel.REVERSE: "Reverse",
}
_BY_NAME = {name.lower(): label for label, name in _SHORT_NAMES.items()}
_BY_NAME.update({label.name.replace("_", "").lower(): label for label in ActionLabel})

MODEL_ACTIONS = (ActionLabel.FORWARD, ActionLabel.TURN_LEFT, ActionLabel.TURN_RIGHT)
N_CLASSES = len(MODEL_ACTIONS)

# Sentinel stored in label arrays for samples that carry no usable label
# (e.g. the tail dropped by a horizon shift).
OUT_OF_RANGE = -1


@dataclass(frozen=True)
class Thresholds:
    v_th: float = DEFAULT_V_TH
    omega_th: float = DEFAULT_OMEGA_TH

    def __post_init__(self):
        for name in ("v_th", "omega_th"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"threshold {name} must be finite and > 0, got {value}")


@dataclass(frozen=True, eq=False)
class KinematicTrack:
    """Timestamped planar velocities, heading and yaw rate."""

    timestamps: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    psi: np.ndarray
    psi_dot: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("timestamps", "vx", "vy", "psi", "psi_dot"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            arrays[name] = arr
        n = len(self.timestamps)
        if n < 2:
            raise InvalidInputError(f"kinematic track needs >= 2 samples, got {n}")
        for name, arr in arrays.items():
            if arr.ndim != 1 or len(arr) != n:
                raise InvalidInputError(f"kinematic field {name!r} has shape {arr.shape}, expected ({n},)")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"kinematic field {name!r} contains non-finite values")
        if np.any(np.diff(self.timestamps) <= 0):
            raise InvalidInputError("kinematic timestamps must be strictly increasing")
        if np.any(self.psi <= -math.pi) or np.any(self.psi > math.pi):
            raise InvalidInputError("heading psi must lie in (-pi, pi]")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True, eq=False)
class LabelSeries:
    """Per-sample action labels; ``OUT_OF_RANGE`` marks unusable samples."""

    timestamps: np.ndarray
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int8)
        if ts.shape != labels.shape or ts.ndim != 1:
            raise InvalidInputError(
                f"label series timestamps {ts.shape} and labels {labels.shape} must be equal-length 1-D"
            )
        bad = (labels != OUT_OF_RANGE) & ((labels < 0) | (labels > max(ActionLabel)))
        if np.any(bad):
            raise InvalidInputError(f"invalid action label value {int(labels[bad][0])}")
        ts.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.labels != OUT_OF_RANGE))


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("input contains non-finite values")


def speed(vx, vy):
    """Planar speed ``sqrt(vx**2 + vy**2)``; works on scalars and arrays."""
    _check_finite(vx, vy)
    out = np.hypot(vx, vy)
    return float(out) if np.ndim(out) == 0 else out


def motion_direction(vx, vy):
    """Direction of travel ``atan2(vy, vx)``.

    Raises UndefinedDirectionError when both components are zero; callers
    are expected to have ruled out the stopped case beforehand.
    """
    _check_finite(vx, vy)
    vx = np.asarray(vx, dtype=float)
    vy = np.asarray(vy, dtype=float)
    if np.any((vx == 0) & (vy == 0)):
        raise UndefinedDirectionError("motion direction is undefined for zero velocity")
    out = wrap_angle(np.arctan2(vy, vx))
    return out


def wrap_angle(a):
    """Wrap to the half-open interval (-pi, pi]; -pi maps to +pi."""
    _check_finite(a)
    r = math.pi - np.mod(math.pi - np.asarray(a, dtype=float), TWO_PI)
    # mod can round up to 2*pi for tiny negative arguments
    r = np.where(r <= -math.pi, r + TWO_PI, r)
    return float(r) if r.ndim == 0 else r


def heading_deviation(theta_v, psi):
    return wrap_angle(np.asarray(theta_v, dtype=float) - np.asarray(psi, dtype=float))


def classify_sample(v: float, psi_dot: float, delta_theta: float, th: Thresholds) -> ActionLabel:
    """Label a single sample.

    Precedence is Stopped, Reverse, TurnLeft, TurnRight, Forward: a vehicle
    moving backwards is Reverse whatever its yaw rate.
    """
    if not isinstance(th, Thresholds):
        raise ConfigError(f"expected Thresholds, got {type(th).__name__}")
    if v < th.v_th:
        return ActionLabel.STOPPED
    if abs(delta_theta) > math.pi / 2:
        return ActionLabel.REVERSE
    if psi_dot > th.omega_th:
        return ActionLabel.TURN_LEFT
    if psi_dot < -th.omega_th:
        return ActionLabel.TURN_RIGHT
    return ActionLabel.FORWARD


def classify(v: np.ndarray, psi_dot: np.ndarray, delta_theta: np.ndarray, th: Thresholds) -> np.ndarray:
    """Vectorised :func:`classify_sample`; returns an int8 label array."""
    v = np.asarray(v, dtype=float)
    psi_dot = np.asarray(psi_dot, dtype=float)
    delta_theta = np.asarray(delta_theta, dtype=float)
    out = np.full(v.shape, ActionLabel.FORWARD, dtype=np.int8)
    out[psi_dot < -th.omega_th] = ActionLabel.TURN_RIGHT
    out[psi_dot > th.omega_th] = ActionLabel.TURN_LEFT
    out[np.abs(delta_theta) > math.pi / 2] = ActionLabel.REVERSE
    out[v < th.v_th] = ActionLabel.STOPPED
    return out


def motion_quantities(vx, vy, psi):
    """Speed and heading deviation; deviation is 0 wherever speed is exactly 0."""
    vx = np.asarray(vx, dtype=float)
    vy = np.asarray(vy, dtype=float)
    v = np.hypot(vx, vy)
    moving = v > 0
    dtheta = np.zeros_like(v)
    if np.any(moving):
        theta_v = np.arctan2(vy[moving], vx[moving])
        dtheta[moving] = heading_deviation(theta_v, np.asarray(psi, dtype=float)[moving])
    return v, dtheta


def label_track(track: KinematicTrack, th: Thresholds) -> LabelSeries:
    if not isinstance(track, KinematicTrack):
        raise InvalidInputError(f"expected KinematicTrack, got {type(track).__name__}")
    v, dtheta = motion_quantities(track.vx, track.vy, track.psi)
    return LabelSeries(track.timestamps, classify(v, track.psi_dot, dtheta, th))


# -- threshold estimation ---------------------------------------------------

KDE_GRID_POINTS = 512
KDE_UPPER_PERCENTILE = 99.5
KDE_BINS = 8192
# A local maximum counts as a mode only if its prominence is at least this
# fraction of its own height; shallow ripples on a broad plateau are not modes.
MODE_MIN_RELATIVE_PROMINENCE = 0.5
MIN_SAMPLES = 1000


def silverman_bandwidth(values: np.ndarray) -> float:
    n = len(values)
    return float(np.std(values, ddof=1) * (n * 3.0 / 4.0) ** (-1.0 / 5.0))


def gaussian_kde(values: np.ndarray, grid: np.ndarray, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian KDE on ``grid`` from a fine histogram of ``values``.

    Binning keeps the cost independent of sample count; with bins much
    narrower than the bandwidth the error is negligible.
    """
    values = np.asarray(values, dtype=float)
    h = silverman_bandwidth(values) if bandwidth is None else bandwidth
    counts, edges = np.histogram(values, bins=KDE_BINS)
    centres = 0.5 * (edges[:-1] + edges[1:])
    keep = counts > 0
    z = (grid[:, None] - centres[keep][None, :]) / h
    dens = np.exp(-0.5 * z**2) @ counts[keep]
    return dens / (len(values) * h * math.sqrt(2 * math.pi))


def density_valley(values: np.ndarray) -> float | None:
    """Deepest KDE minimum between the two tallest modes, or None if unimodal.

    Gaussian kernel with Silverman bandwidth, evaluated on a fixed grid over
    [0, 99.5th percentile].
    """
    values = np.asarray(values, dtype=float)
    hi = float(np.percentile(values, KDE_UPPER_PERCENTILE))
    if not hi > 0 or np.ptp(values) == 0:
        return None
    grid = np.linspace(0.0, hi, KDE_GRID_POINTS)
    density = gaussian_kde(values, grid)
    # zero padding lets a mode sitting on the grid edge count
    padded = np.concatenate(([0.0], density, [0.0]))
    peaks, props = signal.find_peaks(padded, prominence=0.0)
    significant = props["prominences"] >= MODE_MIN_RELATIVE_PROMINENCE * padded[peaks]
    modes = peaks[significant] - 1
    if len(modes) < 2:
        return None
    top_two = np.sort(modes[np.argsort(density[modes])[-2:]])
    lo_i, hi_i = int(top_two[0]), int(top_two[1])
    valley = lo_i + int(np.argmin(density[lo_i : hi_i + 1]))
    return float(grid[valley])


def estimate_thresholds(tracks: Sequence[KinematicTrack]) -> Thresholds:
    """Pick speed and yaw-rate thresholds from pooled kinematic densities.

    Each threshold falls back to its default when its density is unimodal.
    """
    tracks = list(tracks)
    if not tracks:
        raise EstimationError("no tracks given; pass explicit thresholds instead (defaults 0.5 m/s, 0.05 rad/s)")
    total = sum(len(t) for t in tracks)
    if total < MIN_SAMPLES:
        raise EstimationError(
            f"threshold estimation needs >= {MIN_SAMPLES} samples, got {total}; "
            "pass explicit thresholds instead (defaults 0.5 m/s, 0.05 rad/s)"
        )
    v = np.concatenate([np.hypot(t.vx, t.vy) for t in tracks])
    yaw = np.concatenate([np.abs(t.psi_dot) for t in tracks])
    v_th = density_valley(v)
    omega_th = density_valley(yaw)
    return Thresholds(
        v_th=v_th if v_th else DEFAULT_V_TH,
        omega_th=omega_th if omega_th else DEFAULT_OMEGA_TH,
    )


# -- file I/O ---------------------------------------------------------------


def write_kinematics(track: KinematicTrack, path) -> Path:
    path = Path(path)
    table = np.column_stack([track.timestamps, track.vx, track.vy, track.psi, track.psi_dot])
    try:
        np.savetxt(path, table, delimiter=",", header=",".join(KINEMATICS_HEADER), comments="", fmt="%.17g")
    except OSError as exc:
        raise FileError(f"cannot write kinematics file {path}: {exc}") from exc
    return path


def read_kinematics(path) -> KinematicTrack:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if tuple(h.strip() for h in header) != KINEMATICS_HEADER:
                raise InvalidInputError(f"{path}: expected header {','.join(KINEMATICS_HEADER)}, got {','.join(header)}")
            table = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise FileError(f"cannot read kinematics file {path}: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"{path}: malformed kinematics row: {exc}") from exc
    if table.shape[1] != len(KINEMATICS_HEADER):
        raise InvalidInputError(f"{path}: expected {len(KINEMATICS_HEADER)} columns, got {table.shape[1]}")
    return KinematicTrack(*table.T)


LABELS_HEADER = ("t", "label")


def write_labels(series: LabelSeries, path) -> Path:
    """One ``t,label`` row per sample; labels are integer action codes."""
    path = Path(path)
    table = np.column_stack([series.timestamps, series.labels.astype(float)])
    try:
        np.savetxt(path, table, delimiter=",", header=",".join(LABELS_HEADER), comments="", fmt=("%.17g", "%d"))
    except OSError as exc:
        raise FileError(f"cannot write label file {path}: {exc}") from exc
    return path


def read_labels(path) -> LabelSeries:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            header = tuple(h.strip() for h in fh.readline().strip().split(","))
            if header != LABELS_HEADER:
                raise InvalidInputError(f"{path}: expected header {','.join(LABELS_HEADER)}, got {','.join(header)}")
            table = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise FileError(f"cannot read label file {path}: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"{path}: malformed label row: {exc}") from exc
    if table.shape[1] != 2:
        raise InvalidInputError(f"{path}: expected 2 columns, got {table.shape[1]}")
    return LabelSeries(table[:, 0], table[:, 1].astype(np.int8))
