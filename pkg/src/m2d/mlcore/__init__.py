"""Compact trainable classifiers with analytic gradients."""

from .models import ARCHITECTURES, CompactConv, Model, ModelSpec, RecurrentNet, build_model, forward, softmax
from .optim import AdamState, adam_step, backward, class_weights, loss
from .training import (
    Checkpoint,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    predict,
    predict_proba,
    save_checkpoint,
    train,
)

__all__ = [
    "ARCHITECTURES",
    "AdamState",
    "Checkpoint",
    "CompactConv",
    "Model",
    "ModelSpec",
    "RecurrentNet",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "backward",
    "build_model",
    "class_weights",
    "forward",
    "load_checkpoint",
    "loss",
    "predict",
    "predict_proba",
    "save_checkpoint",
    "softmax",
    "train",
]
