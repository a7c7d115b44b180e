"""Synthetic driving sessions: manoeuvre schedule, kinematics and EEG.

Each session is generated from three independent random streams (schedule,
kinematics, EEG) spawned from one seed, so changing one stage never perturbs
the others.

The EEG carries a lateralised slow negativity per turn. It ramps in linearly
over ``lead_time`` before turn onset, holds through the manoeuvre and ramps
out over the last ``lead_time`` of it, i.e. the envelope at time t is the
fraction of [t, t + lead_time] spent turning. The neural state thus runs
``lead_time`` ahead of the executed action.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FileError, InvalidInputError
from .kinlab import OUT_OF_RANGE, ActionLabel, KinematicTrack, LabelSeries, write_kinematics, wrap_angle

DEFAULT_CHANNELS = (
    "Fp1", "Fp2", "C3", "C4", "T3", "T4", "O1", "O2",
    "F7", "F8", "F3", "F4", "T5", "T6", "P3", "P4",
)  # fmt: skip
FRONTAL8 = ("F3", "F4", "F7", "F8", "C3", "C4", "P3", "P4")

RIGHT_MOTOR = ("C4", "F4", "F8", "P4", "T4", "T6")
LEFT_MOTOR = ("C3", "F3", "F7", "P3", "T3", "T5")
IPSILATERAL_WEIGHT = 1.0 / 3.0

BACKGROUND_RMS_UV = 10.0
LINE_NOISE_FRACTION = 0.1
# below this frequency the background spectrum is flat instead of 1/f
PINK_KNEE_HZ = 1.0
TRANSITION_S = 0.5

FORWARD_RANGE_S = (5.0, 30.0)
TURN_RANGE_S = (2.0, 5.0)
STOP_RANGE_S = (2.0, 6.0)
INITIAL_STOP_S = (2.0, 4.0)
STOP_PROBABILITY = 0.1
MIN_SEGMENT_S = 1.0

SIGMA_V = 0.05
SIGMA_YAW = 0.005

STREAM_SCHEDULE, STREAM_KINEMATICS, STREAM_EEG = range(3)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 1
    duration: float = 600.0
    eeg_fs: float = 125.0
    kin_fs: float = 100.0
    channels: tuple[str, ...] = DEFAULT_CHANNELS
    lead_time: float = 800.0  # ms
    snr_db: float = 0.0
    turn_fraction: float = 0.2
    line_noise_hz: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not (self.eeg_fs > 0 and self.kin_fs > 0):
            raise ConfigError("eeg_fs and kin_fs must be > 0")
        if not self.duration >= 60.0:
            raise ConfigError(f"duration must be >= 60 s, got {self.duration}")
        if not self.lead_time >= 0:
            raise ConfigError(f"lead_time must be >= 0 ms, got {self.lead_time}")
        if not 0.0 <= self.turn_fraction <= 0.5:
            raise ConfigError(f"turn_fraction must lie in [0, 0.5], got {self.turn_fraction}")
        if len(set(self.channels)) != len(self.channels) or not self.channels:
            raise ConfigError("channel names must be a non-empty list of unique names")
        if math.isnan(self.snr_db) or self.snr_db == math.inf:
            raise ConfigError(f"snr_db must be finite or -inf, got {self.snr_db}")

    def streams(self) -> list[np.random.Generator]:
        return [np.random.default_rng(s) for s in np.random.SeedSequence(self.seed).spawn(3)]


@dataclass(frozen=True)
class Segment:
    action: ActionLabel
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class ManoeuvreSchedule:
    segments: tuple[Segment, ...]
    session_duration: float

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise InvalidInputError("schedule has no segments")
        if segs[0].start != 0.0 or not math.isclose(segs[-1].end, self.session_duration, abs_tol=1e-9):
            raise InvalidInputError("schedule must cover [0, session_duration]")
        for prev, cur in zip(segs, segs[1:]):
            if cur.start != prev.end:
                raise InvalidInputError(f"schedule gap or overlap at t={prev.end}")
        for s in segs:
            if s.duration < MIN_SEGMENT_S - 1e-9:
                raise InvalidInputError(f"segment {s} shorter than {MIN_SEGMENT_S} s")
            if s.action == ActionLabel.REVERSE:
                raise InvalidInputError("schedules never contain Reverse segments")

    @property
    def transitions(self) -> np.ndarray:
        return np.array([s.start for s in self.segments[1:]])

    def turn_share(self) -> float:
        turning = sum(s.duration for s in self.segments if s.action in (ActionLabel.TURN_LEFT, ActionLabel.TURN_RIGHT))
        return turning / self.session_duration

    def labels_at(self, timestamps) -> LabelSeries:
        """Rasterise the schedule onto a timeline; times past the end are out of range."""
        ts = np.asarray(timestamps, dtype=float)
        starts = np.array([s.start for s in self.segments])
        actions = np.array([s.action for s in self.segments], dtype=np.int8)
        idx = np.searchsorted(starts, ts, side="right") - 1
        labels = actions[np.clip(idx, 0, len(actions) - 1)]
        labels = np.where((ts < 0) | (ts > self.session_duration), OUT_OF_RANGE, labels).astype(np.int8)
        return LabelSeries(ts, labels)


@dataclass(frozen=True, eq=False)
class EegRecording:
    """C x T scalp potentials in microvolts on a uniform timeline."""

    timestamps: np.ndarray
    data: np.ndarray = field(repr=False)
    channel_names: tuple[str, ...]
    fs: float = 125.0

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float)
        data = np.array(self.data, dtype=float)
        names = tuple(self.channel_names)
        if data.ndim != 2 or data.shape[0] != len(names) or data.shape[1] != len(ts):
            raise InvalidInputError(
                f"EEG data shape {data.shape} inconsistent with {len(names)} channels x {len(ts)} timestamps"
            )
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise InvalidInputError("EEG timestamps must be strictly increasing")
        ts.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data) -> "EegRecording":
        return replace(self, data=data)


# -- schedule ---------------------------------------------------------------


def gen_schedule(cfg: SynthConfig) -> ManoeuvreSchedule:
    """Alternate Forward stretches with turns and occasional stops.

    Forward durations are steered so the running turn share tracks
    ``cfg.turn_fraction``, with multiplicative jitter for variety.
    """
    if cfg.turn_fraction > 0.5:
        raise ConfigError(f"turn_fraction {cfg.turn_fraction} is infeasible (> 0.5)")
    rng = cfg.streams()[STREAM_SCHEDULE]
    raw: list[tuple[ActionLabel, float]] = [(ActionLabel.STOPPED, rng.uniform(*INITIAL_STOP_S))]
    elapsed = raw[0][1]
    turning = 0.0
    while elapsed < cfg.duration:
        is_turn = cfg.turn_fraction > 0 and rng.random() >= STOP_PROBABILITY
        if is_turn:
            action = ActionLabel.TURN_LEFT if rng.random() < 0.5 else ActionLabel.TURN_RIGHT
            d_next = rng.uniform(*TURN_RANGE_S)
            target_turning = turning + d_next
        else:
            action = ActionLabel.STOPPED
            d_next = rng.uniform(*STOP_RANGE_S)
            target_turning = turning
        if cfg.turn_fraction > 0:
            d_fwd = target_turning / cfg.turn_fraction - elapsed - d_next
        else:
            d_fwd = FORWARD_RANGE_S[1]
        d_fwd = float(np.clip(d_fwd * rng.uniform(0.75, 1.25), *FORWARD_RANGE_S))
        raw.append((ActionLabel.FORWARD, d_fwd))
        raw.append((action, d_next))
        elapsed += d_fwd + d_next
        if is_turn:
            turning += d_next

    segments: list[Segment] = []
    t = 0.0
    for action, d in raw:
        if t >= cfg.duration:
            break
        end = min(t + d, cfg.duration)
        segments.append(Segment(action, t, end))
        t = end
    if segments[-1].duration < MIN_SEGMENT_S and len(segments) > 1:
        last = segments.pop()
        segments[-1] = Segment(segments[-1].action, segments[-1].start, last.end)
    return ManoeuvreSchedule(tuple(segments), cfg.duration)


# -- kinematics -------------------------------------------------------------


def _segment_profiles(schedule: ManoeuvreSchedule, rng: np.random.Generator):
    """Per-segment speed and yaw-rate profile functions of time."""
    profiles = []
    for seg in schedule.segments:
        if seg.action == ActionLabel.STOPPED:
            profiles.append((lambda t: np.zeros_like(t), 0.0))
        elif seg.action == ActionLabel.FORWARD:
            cruise = rng.uniform(6.5, 10.5)
            amp = rng.uniform(0.0, 1.0)
            period = rng.uniform(8.0, 20.0)
            phase = rng.uniform(0.0, 2 * math.pi)

            def v_fn(t, c=cruise, a=amp, p=period, ph=phase):
                return c + a * np.sin(2 * math.pi * t / p + ph)

            profiles.append((v_fn, 0.0))
        else:
            v_turn = rng.uniform(5.5, 8.0)
            rate = rng.uniform(0.15, 0.4)
            sign = 1.0 if seg.action == ActionLabel.TURN_LEFT else -1.0
            profiles.append((lambda t, v=v_turn: np.full_like(t, v), sign * rate))
    return profiles


def _profile(schedule: ManoeuvreSchedule, values, t: np.ndarray) -> np.ndarray:
    """Evaluate piecewise profiles with cosine cross-fades centred on boundaries."""
    starts = np.array([s.start for s in schedule.segments])
    idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(starts) - 1)
    out = np.empty_like(t)
    for i in range(len(values)):
        m = idx == i
        out[m] = values[i](t[m])
    half = TRANSITION_S / 2
    for i in range(1, len(values)):
        b = starts[i]
        m = np.abs(t - b) < half
        if not np.any(m):
            continue
        s = (t[m] - (b - half)) / TRANSITION_S
        w = (1.0 - np.cos(math.pi * s)) / 2.0
        out[m] = (1.0 - w) * values[i - 1](t[m]) + w * values[i](t[m])
    return out


def kinematic_timestamps(cfg: SynthConfig) -> np.ndarray:
    return np.arange(int(round(cfg.duration * cfg.kin_fs))) / cfg.kin_fs


def eeg_timestamps(cfg: SynthConfig) -> np.ndarray:
    return np.arange(int(round(cfg.duration * cfg.eeg_fs))) / cfg.eeg_fs


def gen_kinematics(schedule: ManoeuvreSchedule, cfg: SynthConfig) -> KinematicTrack:
    rng = cfg.streams()[STREAM_KINEMATICS]
    profiles = _segment_profiles(schedule, rng)
    t = kinematic_timestamps(cfg)
    v = _profile(schedule, [p[0] for p in profiles], t)
    yaw = _profile(schedule, [lambda tt, r=p[1]: np.full_like(tt, r) for p in profiles], t)

    psi0 = rng.uniform(-math.pi, math.pi)
    dt = np.diff(t)
    psi_unwrapped = psi0 + np.concatenate(([0.0], np.cumsum(0.5 * (yaw[1:] + yaw[:-1]) * dt)))
    vx = v * np.cos(psi_unwrapped) + rng.normal(0.0, SIGMA_V, len(t))
    vy = v * np.sin(psi_unwrapped) + rng.normal(0.0, SIGMA_V, len(t))
    yaw_meas = yaw + rng.normal(0.0, SIGMA_YAW, len(t))
    return KinematicTrack(t, vx, vy, wrap_angle(psi_unwrapped), yaw_meas)


# -- EEG --------------------------------------------------------------------


def pink_noise(
    rng: np.random.Generator, n_channels: int, n_samples: int, fs: float = 125.0, knee_hz: float = PINK_KNEE_HZ
) -> np.ndarray:
    """Unit-RMS noise with power spectral density proportional to 1/f above ``knee_hz``.

    The density is held at its knee value below ``knee_hz`` (and zero at DC).
    ``knee_hz = 0`` gives a pure 1/f spectrum down to the lowest FFT bin.
    """
    white = rng.standard_normal((n_channels, n_samples))
    spec = np.fft.rfft(white, axis=1)
    f = np.fft.rfftfreq(n_samples, d=1.0 / fs)
    scale = np.zeros_like(f)
    scale[1:] = 1.0 / np.sqrt(np.maximum(f[1:], knee_hz))
    x = np.fft.irfft(spec * scale, n=n_samples, axis=1)
    x -= x.mean(axis=1, keepdims=True)
    return x / np.sqrt(np.mean(x**2, axis=1, keepdims=True))


def lateral_weights(channels: Sequence[str], action: ActionLabel) -> np.ndarray:
    """Per-channel signature weights: contralateral 1, ipsilateral 1/3, others 0."""
    if action == ActionLabel.TURN_LEFT:
        contra, ipsi = RIGHT_MOTOR, LEFT_MOTOR
    elif action == ActionLabel.TURN_RIGHT:
        contra, ipsi = LEFT_MOTOR, RIGHT_MOTOR
    else:
        return np.zeros(len(channels))
    return np.array([1.0 if ch in contra else IPSILATERAL_WEIGHT if ch in ipsi else 0.0 for ch in channels])


def signature_envelope(schedule: ManoeuvreSchedule, t: np.ndarray, lead_s: float, seg_index: int) -> np.ndarray:
    """Fraction of [t, t + lead] spent inside segment ``seg_index`` (indicator when lead is 0)."""
    seg = schedule.segments[seg_index]
    if lead_s <= 0:
        return ((t >= seg.start) & (t < seg.end)).astype(float)
    overlap = np.minimum(t + lead_s, seg.end) - np.maximum(t, seg.start)
    env = np.clip(overlap / lead_s, 0.0, 1.0)
    floor = schedule.segments[seg_index - 1].start if seg_index > 0 else 0.0
    env[t < floor] = 0.0
    return env


def signature(schedule: ManoeuvreSchedule, cfg: SynthConfig, t: np.ndarray) -> np.ndarray:
    """Signature term in units of background RMS (C x T), before amplitude scaling."""
    lead_s = cfg.lead_time / 1000.0
    out = np.zeros((len(cfg.channels), len(t)))
    truncated = False
    for i, seg in enumerate(schedule.segments):
        if seg.action not in (ActionLabel.TURN_LEFT, ActionLabel.TURN_RIGHT):
            continue
        prev_start = schedule.segments[i - 1].start if i > 0 else 0.0
        if seg.start - lead_s < prev_start:
            truncated = True
        lo = np.searchsorted(t, max(seg.start - lead_s, prev_start), side="left")
        hi = np.searchsorted(t, seg.end, side="right")
        env = signature_envelope(schedule, t[lo:hi], lead_s, i)
        out[:, lo:hi] -= np.outer(lateral_weights(cfg.channels, seg.action), env)
    if truncated:
        warnings.warn("lead_time exceeds a preceding segment; signature ramp truncated", RuntimeWarning, stacklevel=3)
    return out


def gen_eeg(schedule: ManoeuvreSchedule, cfg: SynthConfig) -> EegRecording:
    """1/f background, line noise and lateralised turn signatures."""
    rng = cfg.streams()[STREAM_EEG]
    t = eeg_timestamps(cfg)
    n_ch = len(cfg.channels)
    data = BACKGROUND_RMS_UV * pink_noise(rng, n_ch, len(t), cfg.eeg_fs)
    phases = rng.uniform(0.0, 2 * math.pi, n_ch)
    line_amp = LINE_NOISE_FRACTION * BACKGROUND_RMS_UV
    data += line_amp * np.sin(2 * math.pi * cfg.line_noise_hz * t[None, :] + phases[:, None])
    if cfg.snr_db != -math.inf:
        amplitude = BACKGROUND_RMS_UV * 10.0 ** (cfg.snr_db / 20.0)
        data += amplitude * signature(schedule, cfg, t)
    return EegRecording(t, data, cfg.channels, cfg.eeg_fs)


@dataclass(frozen=True)
class Session:
    session_id: int
    config: SynthConfig
    schedule: ManoeuvreSchedule
    track: KinematicTrack
    eeg: EegRecording


def gen_session(cfg: SynthConfig, session_id: int = 0) -> Session:
    schedule = gen_schedule(cfg)
    return Session(session_id, cfg, schedule, gen_kinematics(schedule, cfg), gen_eeg(schedule, cfg))


# -- file I/O ---------------------------------------------------------------

KINEMATICS_FILE = "kinematics.csv"
EEG_FILE = "eeg.csv"
SCHEDULE_FILE = "schedule.csv"


def write_eeg(eeg: EegRecording, path) -> Path:
    path = Path(path)
    table = np.column_stack([eeg.timestamps, eeg.data.T])
    try:
        np.savetxt(path, table, delimiter=",", header=",".join(("t",) + eeg.channel_names), comments="", fmt="%.17g")
    except OSError as exc:
        raise FileError(f"cannot write EEG file {path}: {exc}") from exc
    return path


def read_eeg(path, fs: float | None = None) -> EegRecording:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            header = [h.strip() for h in fh.readline().strip().split(",")]
            table = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise FileError(f"cannot read EEG file {path}: {exc}") from exc
    except ValueError as exc:
        raise InvalidInputError(f"{path}: malformed EEG row: {exc}") from exc
    if not header or header[0] != "t" or len(header) < 2:
        raise InvalidInputError(f"{path}: EEG header must be t,<ch1>,...,<chC>")
    if table.shape[1] != len(header):
        raise InvalidInputError(f"{path}: header has {len(header)} columns, rows have {table.shape[1]}")
    ts = table[:, 0]
    if fs is None:
        fs = 1.0 / float(np.median(np.diff(ts))) if len(ts) > 1 else 125.0
        fs = round(fs, 6)
    return EegRecording(ts, table[:, 1:].T, tuple(header[1:]), fs)


def write_schedule(schedule: ManoeuvreSchedule, path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("action,start,end\n")
            for s in schedule.segments:
                fh.write(f"{s.action.short},{s.start!r},{s.end!r}\n")
    except OSError as exc:
        raise FileError(f"cannot write schedule file {path}: {exc}") from exc
    return path


def read_schedule(path) -> ManoeuvreSchedule:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FileError(f"cannot read schedule file {path}: {exc}") from exc
    if not lines or lines[0].strip() != "action,start,end":
        raise InvalidInputError(f"{path}: expected header action,start,end")
    segments = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            action, start, end = line.split(",")
            segments.append(Segment(ActionLabel.parse(action), float(start), float(end)))
        except ValueError as exc:
            raise InvalidInputError(f"{path}:{lineno}: malformed schedule row {line!r}") from exc
    if not segments:
        raise InvalidInputError(f"{path}: schedule is empty")
    return ManoeuvreSchedule(tuple(segments), segments[-1].end)


def export_session(schedule: ManoeuvreSchedule, track: KinematicTrack, eeg: EegRecording, directory) -> dict[str, Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileError(f"output directory {directory} does not exist")
    if abs(track.timestamps[-1] - eeg.timestamps[-1]) > 1.0:
        raise InvalidInputError("kinematics and EEG durations disagree by more than 1 s")
    return {
        "kinematics": write_kinematics(track, directory / KINEMATICS_FILE),
        "eeg": write_eeg(eeg, directory / EEG_FILE),
        "schedule": write_schedule(schedule, directory / SCHEDULE_FILE),
    }
