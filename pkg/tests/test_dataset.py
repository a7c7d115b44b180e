import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from m2d import dataset
from m2d.dataset import Aggregation, ExampleSet, SplitConfig, SplitStrategy, WindowSpec
from m2d.errors import ConfigError, EmptyResultError, InvalidInputError
from m2d.kinlab import OUT_OF_RANGE, ActionLabel, LabelSeries
from m2d.synthgen import FRONTAL8, EegRecording

F, L, R, S = (int(a) for a in (ActionLabel.FORWARD, ActionLabel.TURN_LEFT, ActionLabel.TURN_RIGHT, ActionLabel.STOPPED))
FS = 125.0


def _series(labels, fs=FS):
    labels = np.asarray(labels, dtype=np.int8)
    return LabelSeries(np.arange(len(labels)) / fs, labels)


def _eeg(n, channels=("C3", "C4"), fs=FS):
    data = np.tile(np.arange(n, dtype=float), (len(channels), 1)) + np.arange(len(channels))[:, None] * 1e5
    return EegRecording(np.arange(n) / fs, data, channels, fs)


def _examples(labels, n_channels=2, width=16):
    n = len(labels)
    w = np.arange(n * n_channels * width, dtype=np.float32).reshape(n, n_channels, width)
    return ExampleSet(w, labels, np.zeros(n), np.ones(n), np.arange(n, dtype=float), ("C3", "C4")[:n_channels])


# -- horizon shift ----------------------------------------------------------


def test_horizon_samples_rounding():
    assert dataset.horizon_samples(0, FS) == 0
    assert dataset.horizon_samples(1000, FS) == 125
    assert dataset.horizon_samples(100, FS) == 13


def test_shift_horizon():
    s = _series([0, 1, 2, 1, 0])
    assert np.array_equal(dataset.shift_horizon(s, 0, FS).labels, s.labels)
    shifted = dataset.shift_horizon(s, 16, FS)  # 2 samples
    assert list(shifted.labels) == [2, 1, 0, OUT_OF_RANGE, OUT_OF_RANGE]
    with pytest.raises(EmptyResultError):
        dataset.shift_horizon(s, 1000, FS)
    with pytest.raises(ConfigError):
        dataset.shift_horizon(s, -1, FS)


# -- windowing --------------------------------------------------------------


@pytest.mark.parametrize("n, overlap, expected", [(375, 0.5, 5), (125, 0.5, 1), (250, 0.0, 2)])
def test_segment_counts(n, overlap, expected):
    windows, seg = dataset.segment(_eeg(n), _series(np.zeros(n)), WindowSpec(1.0, overlap))
    assert len(windows) == expected == len(seg.starts)
    assert windows[0][0].shape == (2, 125)


def test_segment_too_short():
    with pytest.raises(EmptyResultError):
        dataset.segment(_eeg(100), _series(np.zeros(100)), WindowSpec())


def test_segment_drops_out_of_range_windows():
    labels = np.zeros(375, dtype=np.int8)
    labels[-10:] = OUT_OF_RANGE
    _, seg = dataset.segment(_eeg(375), _series(labels), WindowSpec(1.0, 0.5))
    assert seg.starts.max() + 125 <= 365


@given(st.integers(16, 3000), st.integers(16, 400), st.integers(1, 400))
def test_window_count_formula(t, w, step):
    starts = dataset.window_starts(t, w, step)
    expected = (t - w) // step + 1 if t >= w else 0
    assert len(starts) == expected


def test_window_spec_step_and_bounds():
    assert WindowSpec(1.0, 0.5).step(FS) == 62
    assert WindowSpec(0.5, 0.0).width(FS) == 62
    with pytest.raises(ConfigError):
        WindowSpec(0.1).width(FS)
    with pytest.raises(ConfigError):
        WindowSpec(1.0, 1.0)


def test_aggregate_examples():
    assert dataset.aggregate([F, F, F], Aggregation.REJECT) is ActionLabel.FORWARD
    assert dataset.aggregate([F, F, L], Aggregation.REJECT) is None
    assert dataset.aggregate([F, F, L, L], Aggregation.MAJORITY) is ActionLabel.TURN_LEFT
    assert dataset.aggregate([L, L, F, F], Aggregation.MAJORITY) is ActionLabel.FORWARD
    assert dataset.aggregate([F, L, L, F, R], Aggregation.MAJORITY) is ActionLabel.FORWARD
    assert dataset.aggregate([R, R, R, F], Aggregation.MAJORITY) is ActionLabel.TURN_RIGHT


def _majority_oracle(window):
    values, counts = np.unique(window, return_counts=True)
    tied = set(values[counts == counts.max()].tolist())
    for v in reversed(window.tolist()):
        if v in tied:
            return v


@given(st.lists(st.integers(0, 4), min_size=1, max_size=40))
def test_aggregation_against_oracles(window):
    w = np.array(window, dtype=np.int8)
    rejected = dataset.aggregate(w, Aggregation.REJECT)
    if len(set(window)) == 1:
        assert int(rejected) == window[0]
    else:
        assert rejected is None
    assert int(dataset.aggregate(w, Aggregation.MAJORITY)) == _majority_oracle(w)


def test_restrict_actions():
    ex = _examples([F, S, L, S, R])
    out = dataset.restrict_actions(ex)
    assert list(out.labels) == [F, L, R]
    assert np.array_equal(out.start_time, [0.0, 2.0, 4.0])
    same = dataset.restrict_actions(_examples([F, L]))
    assert list(same.labels) == [F, L]
    with pytest.raises(EmptyResultError):
        dataset.restrict_actions(_examples([S, S]))


# -- splitting --------------------------------------------------------------


def _chunked(n_chunks, chunk=100, gap=10, label=F):
    parts = []
    for _ in range(n_chunks):
        parts += [label] * chunk + [S] * gap
    return np.array(parts, dtype=np.int8)


def test_split_single_class_ten_chunks():
    labels = _chunked(10)
    split = dataset.stratified_temporal_split(labels, SplitConfig(train_frac=0.7, val_frac_of_train=0.0))
    assert split.train == tuple((i * 110, i * 110 + 100) for i in range(7))
    assert split.test == tuple((i * 110, i * 110 + 100) for i in range(7, 10))
    assert split.val == ()


def test_split_validation_tail():
    split = dataset.stratified_temporal_split(_chunked(10), SplitConfig(train_frac=0.7, val_frac_of_train=0.15))
    # 15% of 700 training samples needs two trailing chunks of 100
    assert split.val == ((550, 650), (660, 760))
    assert len(split.train) == 5


def test_split_straddling_chunk_goes_to_train():
    # chunks 100, 100, 300: 70% of 500 is reached inside the third chunk
    labels = np.array([F] * 100 + [S] * 5 + [F] * 100 + [S] * 5 + [F] * 300 + [S] * 5 + [F] * 10, dtype=np.int8)
    split = dataset.stratified_temporal_split(labels, SplitConfig(train_frac=0.7, val_frac_of_train=0.0))
    assert (210, 510) in split.train


def test_split_temporal_plain():
    labels = np.zeros(1000, dtype=np.int8)
    split = dataset.stratified_temporal_split(
        labels, SplitConfig(SplitStrategy.TEMPORAL_PLAIN, train_frac=0.7, val_frac_of_train=0.0)
    )
    assert split.train == ((0, 700),) and split.test == ((700, 1000),)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_split_warns_on_few_chunks():
    with pytest.warns(RuntimeWarning, match="chunks"):
        dataset.stratified_temporal_split(_chunked(2), SplitConfig())


def test_split_config_validation():
    with pytest.raises(ConfigError):
        SplitConfig(train_frac=1.0)
    with pytest.raises(ConfigError):
        SplitConfig(val_frac_of_train=0.6)


def _random_labels(rng, n):
    out, pos = [], 0
    while pos < n:
        d = int(rng.integers(20, 400))
        out += [int(rng.choice([F, F, L, R, S]))] * d
        pos += d
    return np.array(out[:n], dtype=np.int8)


@pytest.mark.filterwarnings("ignore:class .* temporal chunks:RuntimeWarning")
@given(
    seed=st.integers(0, 10_000),
    length=st.sampled_from(dataset.WINDOW_LENGTHS_S[:3]),
    overlap=st.sampled_from(dataset.OVERLAPS),
    strategy=st.sampled_from(list(SplitStrategy)),
)
def test_no_leakage_between_parts(seed, length, overlap, strategy):
    rng = np.random.default_rng(seed)
    n = 6000
    labels = _random_labels(rng, n)
    eeg = _eeg(n)
    parts, split, _ = dataset.build_session(
        eeg, _series(labels), WindowSpec(length, overlap), SplitConfig(strategy), 0, 1
    )
    w = WindowSpec(length, overlap).width(FS)
    spans = {k: [(s, s + w) for s in v.start_index] for k, v in parts.items()}
    for a in ("train", "val"):
        for s0, s1 in spans[a]:
            for t0, t1 in spans["test"]:
                assert s1 <= t0 or t1 <= s0
    for name, intervals in split.parts().items():
        for s0, s1 in spans[name]:
            assert any(lo <= s0 and s1 <= hi for lo, hi in intervals)
    # windows really contain the matching EEG columns
    for name, ex in parts.items():
        if len(ex):
            assert ex.windows[0, 0, 0] == ex.start_index[0]


def test_rejection_correctness(prepared_session):
    eeg, labels = prepared_session
    spec = WindowSpec()
    seg = dataset.segment_labels(labels.labels, spec, eeg.fs)
    for s, lab in zip(seg.starts, seg.labels):
        distinct = len(np.unique(labels.labels[s : s + seg.width]))
        assert (distinct == 1) == (lab != dataset.REJECTED)


def test_horizon_zero_identity(prepared_session):
    eeg, labels = prepared_session
    a, _, _ = dataset.build_session(eeg, labels, WindowSpec(), SplitConfig(), 0, 1)
    shifted = dataset.shift_horizon(labels, 0, eeg.fs)
    b, _, _ = dataset.build_session(eeg, shifted, WindowSpec(), SplitConfig(), 0, 1)
    for k in a:
        np.testing.assert_array_equal(a[k].windows, b[k].windows)
        np.testing.assert_array_equal(a[k].labels, b[k].labels)


def test_build_session_only_model_classes(prepared_session):
    eeg, labels = prepared_session
    parts, _, stats = dataset.build_session(eeg, labels, WindowSpec(), SplitConfig(), 300, 4)
    for ex in parts.values():
        assert set(np.unique(ex.labels)) <= {F, L, R}
        assert np.all(ex.horizon_ms == 300) and np.all(ex.session_id == 4)
    assert 0 < stats.session_rejected_fraction < 0.5


def test_build_session_label_length_mismatch():
    with pytest.raises(InvalidInputError):
        dataset.build_session(_eeg(500), _series(np.zeros(400)), WindowSpec(), SplitConfig(), 0, 1)


# -- oversampling and channels ----------------------------------------------


def test_oversample_balances():
    ex = _examples([F] * 100 + [L] * 20 + [R] * 30)
    out = dataset.oversample(ex, 3)
    assert list(out.class_counts()) == [100, 100, 100]
    # originals kept in front, extras are copies of same-class members
    np.testing.assert_array_equal(out.windows[:150], ex.windows)
    assert np.array_equal(dataset.oversample(ex, 3).windows, out.windows)


def test_oversample_balanced_identity_and_empty():
    ex = _examples([F, L, R])
    assert dataset.oversample(ex, 0) is ex
    with pytest.raises(EmptyResultError):
        dataset.oversample(ExampleSet.empty(2, 16), 0)


def test_select_channels(prepared_session):
    eeg, labels = prepared_session
    parts, _, _ = dataset.build_session(eeg, labels, WindowSpec(), SplitConfig(), 0, 1)
    ex = parts["test"]
    sub = dataset.select_channels(ex, FRONTAL8)
    assert sub.windows.shape[1:] == (8, 125)
    idx = list(ex.channel_names).index("C4")
    np.testing.assert_array_equal(sub.windows[:, FRONTAL8.index("C4")], ex.windows[:, idx])
    same = dataset.select_channels(ex, ex.channel_names)
    np.testing.assert_array_equal(same.windows, ex.windows)
    with pytest.raises(ConfigError, match="XX"):
        dataset.select_channels(ex, ["C3", "XX"])


# -- cache ------------------------------------------------------------------


def test_cache_roundtrip(tmp_path):
    ex = _examples([F, L, R, F])
    path = dataset.write_cache(ex, tmp_path / "c.m2d")
    raw = path.read_bytes()
    assert raw[:4] == b"M2D1"
    assert len(raw) == 16 + 4 * (1 + 2 + 4 + 8 + 4 * 2 * 16)
    back = dataset.read_cache(path, ex.channel_names)
    np.testing.assert_array_equal(back.windows, ex.windows)
    np.testing.assert_array_equal(back.labels, ex.labels)
    np.testing.assert_array_equal(back.start_time, ex.start_time)
    assert back.channel_names == ex.channel_names


def test_cache_rejects_garbage(tmp_path):
    p = tmp_path / "bad.m2d"
    p.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(InvalidInputError):
        dataset.read_cache(p)
