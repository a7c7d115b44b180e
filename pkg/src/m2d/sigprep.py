"""Kinematics-to-EEG synchronisation and the two retained preprocessing chains."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, CoverageError, DegenerateChannelError, NotSupportedError, TooShortError
from .kinlab import KinematicTrack, heading_deviation, wrap_angle
from .synthgen import EegRecording

MAX_EXTRAPOLATION_S = 1.0


class Pipeline(enum.Enum):
    ZSCORE_ONLY = "ZscoreOnly"
    BANDPASS_ZSCORE = "BandpassZscore"
    # artefact-handling chains evaluated in the literature; not supported
    PYPREP = "PyPREP"
    PYPREP_RANSAC = "PyPREP+RANSAC"
    ICA = "ICA"
    ASR = "ASR"
    AUTOREJECT = "AutoReject"

    @classmethod
    def parse(cls, text: str) -> "Pipeline":
        for p in cls:
            if p.value.lower() == text.strip().lower():
                return p
        raise ConfigError(f"unknown preprocessing pipeline {text!r}; choose ZscoreOnly or BandpassZscore")


SUPPORTED_PIPELINES = (Pipeline.ZSCORE_ONLY, Pipeline.BANDPASS_ZSCORE)


@dataclass(frozen=True)
class PrepConfig:
    pipeline: Pipeline = Pipeline.ZSCORE_ONLY
    band: tuple[float, float] = (1.0, 40.0)

    def validate(self, fs: float) -> None:
        lo, hi = self.band
        if not 0 < lo < hi < fs / 2:
            raise ConfigError(f"band ({lo}, {hi}) must satisfy 0 < lo < hi < fs/2 = {fs / 2}")


@dataclass(frozen=True, eq=False)
class AlignedKinematics:
    timestamps: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    psi_dot: np.ndarray
    delta_theta: np.ndarray


def resample_to_eeg(track: KinematicTrack, eeg_timestamps) -> AlignedKinematics:
    """Linearly interpolate kinematics onto the EEG timeline.

    Heading is interpolated on the circle (unwrap, interpolate, re-wrap).
    Speed and heading deviation are recomputed from interpolated velocity
    components. Queries outside the track are clamped to the edge samples.
    """
    t = np.asarray(eeg_timestamps, dtype=float)
    tk = track.timestamps
    if len(t) and (t[0] < tk[0] - MAX_EXTRAPOLATION_S or t[-1] > tk[-1] + MAX_EXTRAPOLATION_S):
        raise CoverageError(
            f"EEG span [{t[0]:.3f}, {t[-1]:.3f}] s exceeds kinematic coverage "
            f"[{tk[0]:.3f}, {tk[-1]:.3f}] s by more than {MAX_EXTRAPOLATION_S} s"
        )
    vx = np.interp(t, tk, track.vx)
    vy = np.interp(t, tk, track.vy)
    psi = wrap_angle(np.interp(t, tk, np.unwrap(track.psi)))
    psi_dot = np.interp(t, tk, track.psi_dot)
    v = np.hypot(vx, vy)
    dtheta = np.zeros_like(v)
    moving = v > 0
    dtheta[moving] = heading_deviation(np.arctan2(vy[moving], vx[moving]), psi[moving])
    return AlignedKinematics(t, v, psi, psi_dot, dtheta)


def zscore(recording: EegRecording) -> EegRecording:
    """Per-channel standardisation over the whole session (population std)."""
    data = recording.data
    mean = data.mean(axis=1, keepdims=True)
    centred = data - mean
    std = np.sqrt(np.mean(centred**2, axis=1, keepdims=True))
    for i, s in enumerate(std[:, 0]):
        if not s > 0 or not np.isfinite(s):
            raise DegenerateChannelError(f"channel {recording.channel_names[i]!r} has zero variance")
    return recording.with_data(centred / std)


def filter_order(fs: float, lo: float) -> int:
    n = math.ceil(4.0 * fs / lo)
    return n if n % 2 == 1 else n + 1


def lowpass_kernel(cutoff: float, fs: float, n_taps: int) -> np.ndarray:
    m = (n_taps - 1) / 2
    n = np.arange(n_taps) - m
    fc = cutoff / fs
    h = 2 * fc * np.sinc(2 * fc * n) * np.hamming(n_taps)
    return h / h.sum()


def bandpass_kernel(band: tuple[float, float], fs: float) -> np.ndarray:
    """Hamming-windowed sinc band-pass, odd length, symmetric."""
    lo, hi = band
    n_taps = filter_order(fs, lo)
    return lowpass_kernel(hi, fs, n_taps) - lowpass_kernel(lo, fs, n_taps)


def bandpass(recording: EegRecording, band: tuple[float, float] = (1.0, 40.0)) -> EegRecording:
    """Zero-phase FIR band-pass with reflection padding at the edges."""
    PrepConfig(Pipeline.BANDPASS_ZSCORE, band).validate(recording.fs)
    h = bandpass_kernel(band, recording.fs)
    if recording.n_samples < len(h):
        raise TooShortError(
            f"recording has {recording.n_samples} samples, shorter than the {len(h)}-tap filter kernel"
        )
    half = len(h) // 2
    padded = np.pad(recording.data, ((0, 0), (half, half)), mode="reflect")
    return recording.with_data(kernels.fir_filter(np.ascontiguousarray(padded), h))


def preprocess(recording: EegRecording, cfg: PrepConfig) -> EegRecording:
    if cfg.pipeline not in SUPPORTED_PIPELINES:
        raise NotSupportedError(f"preprocessing pipeline {cfg.pipeline.value} is not supported")
    if cfg.pipeline is Pipeline.BANDPASS_ZSCORE:
        recording = bandpass(recording, cfg.band)
    return zscore(recording)
