import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from m2d.dataset import ExampleSet
from m2d.errors import ConfigError, DivergenceError, InvalidInputError, ShapeError, TrainingError
from m2d.mlcore import (
    AdamState,
    ModelSpec,
    TrainConfig,
    adam_step,
    build_model,
    class_weights,
    forward,
    load_checkpoint,
    loss,
    predict,
    save_checkpoint,
    softmax,
    train,
)
from m2d.mlcore.training import Checkpoint

ARCHS = ("CompactConv", "RecurrentNet")


def small_spec(arch, c=4, w=60):
    return ModelSpec(arch=arch, n_channels=c, n_samples=w, hidden=8)


def toy_set(n, rng, c=4, w=60, amp=3.0, noise=0.3):
    """Each class drives its own channel with a distinct sinusoid."""
    y = np.tile(np.arange(3), n // 3 + 1)[:n]
    t = np.arange(w) / 125.0
    x = rng.normal(scale=noise, size=(n, c, w))
    for k in range(3):
        x[y == k, k] += amp * np.sin(2 * np.pi * (4 + 4 * k) * t)
    return ExampleSet(x.astype(np.float32), y.astype(np.int8), np.zeros(n), np.ones(n), np.arange(n, dtype=float),
                      tuple(f"c{i}" for i in range(c)))


# -- forward ----------------------------------------------------------------


@pytest.mark.parametrize("arch", ARCHS)
def test_zero_dense_gives_uniform(arch, rng):
    model = build_model(small_spec(arch), 0)
    model.params["dense.w"][:] = 0
    model.params["dense.b"][:] = 0
    _, probs = forward(model, rng.normal(size=(5, 4, 60)))
    np.testing.assert_allclose(probs, 1 / 3, atol=1e-7)


@pytest.mark.parametrize("arch", ARCHS)
def test_batch_independence(arch, rng):
    model = build_model(ModelSpec(arch=arch), 3)
    x = rng.normal(size=(128, 16, 125)).astype(np.float32)
    full, _ = forward(model, x)
    single, _ = forward(model, x[17:18])
    np.testing.assert_allclose(single[0], full[17], atol=1e-6)


@pytest.mark.parametrize("arch", ARCHS)
def test_forward_deterministic_and_normalised(arch, rng):
    x = rng.normal(size=(6, 4, 60))
    a, pa = forward(build_model(small_spec(arch), 11), x)
    b, _ = forward(build_model(small_spec(arch), 11), x)
    assert np.array_equal(a, b)
    np.testing.assert_allclose(pa.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((pa >= 0) & (pa <= 1))


@pytest.mark.parametrize("arch", ARCHS)
def test_shape_error(arch):
    model = build_model(small_spec(arch), 0)
    with pytest.raises(ShapeError, match="expected"):
        forward(model, np.zeros((2, 5, 60)))


def test_spec_validation():
    with pytest.raises(ConfigError):
        ModelSpec(arch="Transformer")
    with pytest.raises(ConfigError):
        ModelSpec(n_samples=30)


def test_parameter_counts():
    conv = build_model(ModelSpec(), 0)
    # temporal 8*13+8, spatial 8*8*16+8, dense 3*(8*9)+3 with 8 pools of 25/12 over 113 samples
    assert conv.n_params == 8 * 13 + 8 + 8 * 8 * 16 + 8 + 8 * 8 * 3 + 3
    gru = build_model(ModelSpec(arch="RecurrentNet"), 0)
    assert gru.n_params == 16 * 192 + 64 * 192 + 2 * 192 + 64 * 3 + 3


# -- loss -------------------------------------------------------------------


def test_loss_examples():
    value, _ = loss(np.zeros((4, 3)), [0, 1, 2, 0])
    assert value == pytest.approx(np.log(3))
    perfect, grad = loss(np.array([[50.0, -50, -50]]), [0])
    assert perfect == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.abs(grad) < 1e-12)
    with pytest.raises(InvalidInputError):
        loss(np.zeros((1, 3)), [3])


def test_class_weight_example():
    labels = [0] * 60 + [1] * 30 + [2] * 10
    np.testing.assert_allclose(class_weights(labels), [0.5556, 1.1111, 3.3333], atol=1e-4)
    np.testing.assert_array_equal(class_weights(labels, scheme="uniform"), 1.0)


@given(st.integers(1, 30), st.integers(0, 2**31))
def test_balanced_weights_match_unweighted(n, seed):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(3), n)
    logits = rng.normal(size=(3 * n, 3))
    w = class_weights(y)
    assert loss(logits, y, w)[0] == pytest.approx(loss(logits, y)[0], abs=1e-9)


@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3), st.floats(-100, 100))
def test_prediction_shift_invariance(row, c):
    logits = np.array([row])
    assert np.argmax(softmax(logits)) == np.argmax(softmax(logits + c))
    np.testing.assert_allclose(softmax(logits).sum(), 1.0, atol=1e-6)


# -- gradients --------------------------------------------------------------


def test_zero_input_conv_gradients(rng):
    model = build_model(small_spec("CompactConv"), 0, np.float64)
    model.params["temporal.b"][:] = rng.normal(size=8)
    _, cache = model.forward(np.zeros((3, 4, 60)), keep_cache=True)
    grads = model.backward(cache, rng.normal(size=(3, 3)))
    assert np.all(grads["temporal.w"] == 0)
    assert np.any(grads["temporal.b"] != 0)


@pytest.mark.parametrize("arch", ARCHS)
def test_gradient_spot_check(arch, rng):
    from m2d.mlcore import backward

    model = build_model(small_spec(arch, c=3, w=40), 5, np.float64)
    x = rng.normal(size=(4, 3, 40))
    y = np.array([0, 1, 2, 1])
    w = np.array([0.7, 1.3, 1.0])
    grads = backward(model, x, y, w)
    for name, p in model.params.items():
        for idx in list(np.ndindex(p.shape))[:: max(1, p.size // 15)]:
            old = p[idx]
            p[idx] = old + 1e-5
            up = loss(model.forward(x)[0], y, w)[0]
            p[idx] = old - 1e-5
            down = loss(model.forward(x)[0], y, w)[0]
            p[idx] = old
            fd = (up - down) / 2e-5
            assert abs(grads[name][idx] - fd) / max(1.0, abs(fd)) <= 1e-4, name


# -- Adam -------------------------------------------------------------------


def test_adam_zero_gradient():
    params = {"a": np.array([1.0, -2.0])}
    adam_step(params, {"a": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(params["a"], [1.0, -2.0])


def test_adam_first_and_second_step():
    params = {"a": np.zeros(3)}
    state = AdamState()
    adam_step(params, {"a": np.ones(3)}, state, lr=1e-3)
    d1 = params["a"].copy()
    np.testing.assert_allclose(d1, -1e-3 / (1 + 1e-8), rtol=1e-12)
    adam_step(params, {"a": np.ones(3)}, state, lr=1e-3)
    d2 = params["a"] - d1
    assert np.all(np.abs(d2) <= np.abs(d1) * 1.01)
    assert state.t == 2


def test_adam_divergence():
    params = {"a": np.array([np.finfo(np.float64).max])}
    with pytest.raises(DivergenceError, match="'a'"):
        adam_step(params, {"a": np.array([np.nan])}, AdamState())


# -- training ---------------------------------------------------------------


def test_separable_toy_set_learns(rng):
    tr, va = toy_set(240, rng), toy_set(90, rng)
    result = train(small_spec("CompactConv"), TrainConfig(batch_size=32, max_epochs=30, patience=30, learning_rate=1e-2),
                   tr, va)
    assert result.checkpoint.val_macro_f1 >= 0.95
    losses = [e.train_loss for e in result.history[:5]]
    for a, b in zip(losses, losses[1:]):
        assert b <= a * 1.05
    assert losses[-1] < losses[0]


def test_training_determinism(rng):
    tr, va = toy_set(90, rng), toy_set(30, rng)
    cfg = TrainConfig(batch_size=16, max_epochs=3, seed=4)
    a = train(small_spec("RecurrentNet"), cfg, tr, va)
    b = train(small_spec("RecurrentNet"), cfg, tr, va)
    assert a.log_text() == b.log_text()
    assert a.log_text().splitlines()[0] == "epoch,train_loss,val_macro_f1,val_balanced_accuracy"


def test_best_checkpoint_keeps_earliest(rng):
    tr, va = toy_set(60, rng), toy_set(30, rng)
    result = train(small_spec("CompactConv"), TrainConfig(batch_size=16, max_epochs=6, patience=2), tr, va)
    scores = [e.val_macro_f1 for e in result.history]
    assert result.checkpoint.val_macro_f1 == max(scores)
    assert result.checkpoint.epoch == scores.index(max(scores)) + 1
    if result.stopped_early:
        assert len(scores) - result.checkpoint.epoch == 2


def test_train_errors(rng):
    tr = toy_set(30, rng)
    with pytest.raises(TrainingError, match="empty"):
        train(small_spec("CompactConv"), TrainConfig(max_epochs=1), tr, ExampleSet.empty(4, 60))
    with pytest.raises(InvalidInputError):
        train(small_spec("CompactConv", w=70), TrainConfig(max_epochs=1), tr, tr)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_train_divergence_reports_epoch(rng):
    tr = toy_set(30, rng)
    tr.windows[0, 0, 0] = np.nan
    with pytest.raises(TrainingError, match="epoch 1"):
        train(small_spec("CompactConv"), TrainConfig(max_epochs=1), tr, tr)


# -- prediction and checkpoints ---------------------------------------------


def test_predict_argmax_and_ties(rng):
    model = build_model(small_spec("CompactConv"), 0)
    model.params["dense.w"][:] = 0
    model.params["dense.b"][:] = np.log([0.2, 0.5, 0.3])
    x = rng.normal(size=(3, 4, 60)).astype(np.float32)
    assert list(predict(model, x)) == [1, 1, 1]
    model.params["dense.b"][:] = 0
    assert list(predict(model, x)) == [0, 0, 0]


def test_batch_predict_is_concatenation(rng):
    model = build_model(small_spec("RecurrentNet"), 2)
    x = rng.normal(size=(7, 4, 60)).astype(np.float32)
    assert list(predict(model, x)) == [int(predict(model, x[i : i + 1])[0]) for i in range(7)]


@pytest.mark.parametrize("arch", ARCHS)
def test_checkpoint_roundtrip(arch, tmp_path, rng):
    model = build_model(small_spec(arch), 9)
    path = save_checkpoint(Checkpoint(model, 12, 0.875), tmp_path / "m.m2dc")
    back = load_checkpoint(path)
    assert back.epoch == 12 and back.val_macro_f1 == 0.875
    assert back.model.spec.arch == arch and back.model.n_params == model.n_params
    x = rng.normal(size=(3, 4, 60)).astype(np.float32)
    np.testing.assert_array_equal(forward(back.model, x)[0], forward(model, x)[0])


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x.m2dc"
    p.write_bytes(b"nope")
    with pytest.raises(InvalidInputError):
        load_checkpoint(p)
