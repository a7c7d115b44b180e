import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from m2d import sigprep
from m2d.errors import ConfigError, CoverageError, DegenerateChannelError, NotSupportedError, TooShortError
from m2d.kinlab import KinematicTrack
from m2d.sigprep import Pipeline, PrepConfig
from m2d.synthgen import EegRecording

FS = 125.0


def _rec(data, fs=FS, names=None):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    names = names or tuple(f"ch{i}" for i in range(len(data)))
    return EegRecording(np.arange(data.shape[1]) / fs, data, names, fs)


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def _tone(freq, seconds=30.0):
    t = np.arange(int(seconds * FS)) / FS
    return np.sin(2 * np.pi * freq * t)


def _track(t, v, psi=None, yaw=None):
    psi = np.zeros_like(t) if psi is None else psi
    yaw = np.zeros_like(t) if yaw is None else yaw
    return KinematicTrack(t, v * np.cos(psi), v * np.sin(psi), psi, yaw)


def test_resample_identity_at_track_samples():
    t = np.arange(0, 10, 0.01)
    tr = _track(t, 5 + np.sin(t), yaw=np.cos(t))
    al = sigprep.resample_to_eeg(tr, t[::7])
    np.testing.assert_allclose(al.v, (5 + np.sin(t))[::7], atol=1e-12)
    np.testing.assert_allclose(al.psi_dot, np.cos(t)[::7], atol=1e-12)


def test_resample_midpoint():
    t = np.array([0.0, 1.0])
    tr = KinematicTrack(t, np.array([2.0, 4.0]), np.zeros(2), np.zeros(2), np.zeros(2))
    assert sigprep.resample_to_eeg(tr, [0.5]).v[0] == pytest.approx(3.0)


def test_resample_heading_across_seam():
    t = np.array([0.0, 1.0])
    tr = KinematicTrack(t, np.ones(2), np.zeros(2), np.array([3.1, -3.1]), np.zeros(2))
    psi = sigprep.resample_to_eeg(tr, [0.5]).psi[0]
    # brute force: unwrap the second sample, interpolate, wrap
    oracle = 3.1 + 0.5 * ((-3.1 + 2 * math.pi) - 3.1)
    oracle = (oracle + math.pi) % (2 * math.pi) - math.pi
    assert abs(psi) > 3.1
    assert math.cos(psi - oracle) == pytest.approx(1.0)


@given(st.floats(-5, 5), st.floats(-10, 10))
def test_resample_exact_on_affine(a, b):
    t = np.arange(0, 5, 0.01)
    v = a * t + b
    tr = KinematicTrack(t, v, np.zeros_like(t), np.zeros_like(t), v)
    q = np.arange(0, 4.99, 1 / FS)
    np.testing.assert_allclose(sigprep.resample_to_eeg(tr, q).psi_dot, a * q + b, atol=1e-9)


def test_resample_coverage_error():
    t = np.arange(0, 10, 0.01)
    with pytest.raises(CoverageError):
        sigprep.resample_to_eeg(_track(t, np.full_like(t, 5.0)), [0.0, 12.0])
    # within one second of the edge is clamped, not an error
    assert len(sigprep.resample_to_eeg(_track(t, np.full_like(t, 5.0)), [0.0, 10.5]).v) == 2


def test_zscore_hand_example():
    out = sigprep.zscore(_rec([[1.0, 2.0, 3.0]]))
    np.testing.assert_allclose(out.data[0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_zscore_moments_and_idempotence(rng):
    rec = _rec(rng.normal(3.0, 7.0, (4, 1000)))
    z = sigprep.zscore(rec)
    np.testing.assert_allclose(z.data.mean(axis=1), 0, atol=1e-9)
    np.testing.assert_allclose(z.data.std(axis=1), 1, atol=1e-9)
    np.testing.assert_allclose(sigprep.zscore(z).data, z.data, atol=1e-9)


def test_zscore_constant_channel_named():
    with pytest.raises(DegenerateChannelError, match="flat"):
        sigprep.zscore(_rec([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]], names=("C3", "flat")))


def test_filter_order_odd():
    assert sigprep.filter_order(125.0, 1.0) == 501
    assert sigprep.filter_order(100.0, 3.0) % 2 == 1


def test_bandpass_kernel_symmetric():
    h = sigprep.bandpass_kernel((1.0, 40.0), FS)
    np.testing.assert_allclose(h, h[::-1], atol=1e-15)


def test_bandpass_passes_10hz():
    x = _tone(10.0)
    assert _rms(sigprep.bandpass(_rec(x)).data[0]) == pytest.approx(_rms(x), rel=0.1)


def test_bandpass_suppresses_50hz():
    x = _tone(50.0)
    assert _rms(sigprep.bandpass(_rec(x)).data[0]) <= 0.1 * _rms(x)


def test_bandpass_removes_dc():
    assert _rms(sigprep.bandpass(_rec(np.full(3000, 4.0))).data[0]) <= 0.01 * 4.0


def test_bandpass_stopband_20db():
    # lo/2; 2*hi lies above Nyquist at 125 Hz, so check the highest sub-Nyquist tone instead
    for f, band in ((0.5, (1.0, 40.0)), (60.0, (1.0, 25.0))):
        x = _tone(f, 120.0)
        y = sigprep.bandpass(_rec(x), band).data[0][1000:-1000]
        assert 20 * np.log10(_rms(y) / _rms(x[1000:-1000])) <= -20.0


def test_bandpass_zero_phase():
    x = _tone(8.0)
    y = sigprep.bandpass(_rec(x)).data[0]
    lag = np.argmax(np.correlate(y[500:-500], x[500:-500], mode="full")) - (len(x) - 1001)
    assert lag == 0


def test_bandpass_linear(rng):
    x, y = rng.normal(size=(2, 3000))
    a, b = 1.7, -0.4
    lhs = sigprep.bandpass(_rec(a * x + b * y)).data[0]
    rhs = a * sigprep.bandpass(_rec(x)).data[0] + b * sigprep.bandpass(_rec(y)).data[0]
    assert _rms(lhs - rhs) <= 1e-6


def test_bandpass_too_short():
    with pytest.raises(TooShortError):
        sigprep.bandpass(_rec(np.zeros(100)))


def test_prep_config_band_validation():
    with pytest.raises(ConfigError):
        PrepConfig(band=(1.0, 80.0)).validate(FS)


@pytest.mark.parametrize("pipeline", [Pipeline.PYPREP, Pipeline.ICA, Pipeline.ASR, Pipeline.AUTOREJECT])
def test_artefact_pipelines_not_supported(pipeline, rng):
    with pytest.raises(NotSupportedError):
        sigprep.preprocess(_rec(rng.normal(size=(2, 2000))), PrepConfig(pipeline))


def test_bandpass_zscore_order(rng):
    rec = _rec(rng.normal(5.0, 2.0, (3, 4000)))
    out = sigprep.preprocess(rec, PrepConfig(Pipeline.BANDPASS_ZSCORE))
    np.testing.assert_allclose(out.data.mean(axis=1), 0, atol=1e-9)
    expected = sigprep.zscore(sigprep.bandpass(rec)).data
    np.testing.assert_allclose(out.data, expected, atol=1e-12)
    assert rec.data.mean() > 4  # input untouched
