"""Mini-batch training with validation checkpointing, prediction and checkpoint files."""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FileError, InvalidInputError, TrainingError
from ..metrics import evaluate
from .models import ARCHITECTURES, Model, ModelSpec, build_model, softmax
from .optim import AdamState, adam_step, class_weights, loss_and_grads

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"M2DC"
_HEADER = struct.Struct("<4sBIIIIdI")
PREDICT_CHUNK = 1024


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-3
    seed: int = 0
    class_weighting: str = "inverse-frequency"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.class_weighting not in ("inverse-frequency", "uniform"):
            raise ConfigError(f"unknown class weighting {self.class_weighting!r}")


@dataclass
class Checkpoint:
    model: Model
    epoch: int
    val_macro_f1: float


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_macro_f1: float
    val_balanced_accuracy: float
    seconds: float

    def line(self) -> str:
        # wall-clock time is left out so logs of identical runs are byte-identical
        return f"{self.epoch},{self.train_loss:.6f},{self.val_macro_f1:.6f},{self.val_balanced_accuracy:.6f}"


LOG_HEADER = "epoch,train_loss,val_macro_f1,val_balanced_accuracy"


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochLog] = field(default_factory=list)
    stopped_early: bool = False

    def log_text(self) -> str:
        return "\n".join([LOG_HEADER] + [e.line() for e in self.history]) + "\n"


def predict_proba(model: Model, windows) -> np.ndarray:
    windows = np.asarray(windows)
    out = np.empty((len(windows), model.spec.n_classes))
    for a in range(0, len(windows), PREDICT_CHUNK):
        logits, _ = model.forward(windows[a : a + PREDICT_CHUNK])
        out[a : a + PREDICT_CHUNK] = softmax(logits.astype(np.float64))
    return out


def predict(model: Model, windows) -> np.ndarray:
    """Arg-max class per window; ties resolve to the lowest class index."""
    if len(windows) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(predict_proba(model, windows), axis=1)


def _check_sets(spec: ModelSpec, train_set, val_set):
    for name, ds in (("train", train_set), ("validation", val_set)):
        if len(ds) == 0:
            raise TrainingError(f"{name} set is empty")
        if ds.windows.shape[1:] != spec.input_shape:
            raise InvalidInputError(
                f"{name} windows have shape {ds.windows.shape[1:]}, model expects {spec.input_shape}"
            )


def train(spec: ModelSpec, cfg: TrainConfig, train_set, val_set, progress=None) -> TrainResult:
    """Fit a fresh model and keep the epoch with the best validation Macro-F1.

    Ties in validation Macro-F1 keep the earlier epoch. Training stops after
    ``patience`` epochs without improvement. ``progress`` is called with each
    EpochLog if given.
    """
    _check_sets(spec, train_set, val_set)
    init_rng, shuffle_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    model = build_model(spec, init_rng, np.float32)
    weights = class_weights(train_set.labels, spec.n_classes, cfg.class_weighting)
    x = np.ascontiguousarray(train_set.windows, dtype=np.float32)
    y = np.asarray(train_set.labels, dtype=np.int64)
    state = AdamState()
    best: Checkpoint | None = None
    history: list[EpochLog] = []
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(y))
        total, count = 0.0, 0
        for a in range(0, len(order), cfg.batch_size):
            idx = order[a : a + cfg.batch_size]
            value, grads = loss_and_grads(model, x[idx], y[idx], weights)
            if not np.isfinite(value):
                raise TrainingError(f"loss became non-finite in epoch {epoch}")
            adam_step(model.params, grads, state, lr=cfg.learning_rate)
            total += value * len(idx)
            count += len(idx)
        rep = evaluate(val_set.labels, predict(model, val_set.windows), spec.n_classes)
        entry = EpochLog(epoch, total / count, rep.macro_f1, rep.balanced_accuracy, time.perf_counter() - t0)
        history.append(entry)
        log.info("epoch %d loss %.4f val macro-F1 %.4f", epoch, entry.train_loss, entry.val_macro_f1)
        if progress is not None:
            progress(entry)
        if best is None or rep.macro_f1 > best.val_macro_f1:
            best = Checkpoint(model.copy(), epoch, rep.macro_f1)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                return TrainResult(best, history, stopped_early=True)
    return TrainResult(best, history)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Binary layout: header, then every parameter as little-endian float32 in model order."""
    path = Path(path)
    spec = ckpt.model.spec
    arch = ARCHITECTURES.index(spec.arch)
    # second slot holds the per-architecture width hyper-parameter
    width = spec.hidden if spec.arch == "RecurrentNet" else spec.temporal_filters
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, arch, spec.n_channels, spec.n_samples, spec.n_classes, width,
        float(ckpt.val_macro_f1), ckpt.epoch,
    )
    blob = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in ckpt.model.params.values())
    try:
        path.write_bytes(header + blob)
    except OSError as exc:
        raise FileError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FileError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _HEADER.size or raw[:4] != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"{path}: not a checkpoint file")
    _, arch, n_ch, n_s, n_cls, width, f1, epoch = _HEADER.unpack_from(raw)
    if arch >= len(ARCHITECTURES):
        raise InvalidInputError(f"{path}: unknown architecture tag {arch}")
    name = ARCHITECTURES[arch]
    extra = {"hidden": width} if name == "RecurrentNet" else {"temporal_filters": width}
    spec = ModelSpec(arch=name, n_channels=n_ch, n_samples=n_s, n_classes=n_cls, **extra)
    model = build_model(spec, 0, np.float32)
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if values.size != model.n_params:
        raise InvalidInputError(f"{path}: expected {model.n_params} parameters, found {values.size}")
    pos = 0
    for name_, p in model.params.items():
        model.params[name_] = values[pos : pos + p.size].reshape(p.shape).astype(np.float32)
        pos += p.size
    return Checkpoint(model, epoch, f1)
