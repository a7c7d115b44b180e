"""Experiment configuration: a flat ``section.key = value`` text format.

Blank lines and lines starting with ``#`` are ignored. Every key has a
default; unknown keys are rejected. :func:`render` writes the fully resolved
configuration in the same format, so an echoed file re-loads to the same
experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

from .dataset import OVERLAPS, WINDOW_LENGTHS_S, Aggregation, SplitConfig, SplitStrategy, WindowSpec
from .errors import ConfigError, FileError
from .kinlab import Thresholds
from .mlcore import ARCHITECTURES, ModelSpec, TrainConfig
from .sigprep import Pipeline, PrepConfig
from .synthgen import DEFAULT_CHANNELS, FRONTAL8, SynthConfig

CHANNEL_SETS = {"all16": DEFAULT_CHANNELS, "frontal8": FRONTAL8}
DEFAULT_HORIZONS = tuple(range(0, 1001, 100))


# -- value parsers and formatters -------------------------------------------


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None
    if math.isnan(value):
        raise ConfigError("NaN is not a valid setting")
    return value


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected true or false, got {text!r}")


def _items(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        for opt in options:
            if opt.lower() == text.lower():
                return opt
        raise ConfigError(f"expected one of {', '.join(options)}, got {text!r}")

    return parse


def _horizons(text: str) -> tuple[int, ...]:
    values = tuple(_int(t) for t in _items(text))
    if not values:
        raise ConfigError("at least one horizon is required")
    if any(v < 0 for v in values):
        raise ConfigError("horizons must be >= 0 ms")
    if list(values) != sorted(set(values)):
        raise ConfigError("horizons must be sorted ascending without duplicates")
    return values


def _band(text: str) -> tuple[float, float]:
    values = [_float(t) for t in _items(text)]
    if len(values) != 2:
        raise ConfigError(f"expected 'lo, hi', got {text!r}")
    return values[0], values[1]


def _channels(text: str) -> str | tuple[str, ...]:
    if text.lower() in CHANNEL_SETS:
        return text.lower()
    names = tuple(_items(text))
    if not names:
        raise ConfigError("channel list is empty")
    return names


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ("-inf" if value < 0 else "inf")
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Field:
    key: str
    default: Any
    parse: Callable[[str], Any]
    help: str


FIELDS: tuple[Field, ...] = (
    Field("experiment.output_dir", "m2d_out", str, "directory receiving every stage's files"),
    Field("experiment.sessions", 5, _int, "number of synthetic sessions; session i uses seed synth.seed + i"),
    Field("experiment.horizons", DEFAULT_HORIZONS, _horizons, "prediction horizons in ms"),
    Field("experiment.channels", "all16", _channels, "all16, frontal8 or a comma-separated channel list"),
    Field("synth.seed", 1, _int, "seed of the first session"),
    Field("synth.duration", 600.0, _float, "session length in s"),
    Field("synth.eeg_fs", 125.0, _float, "EEG sampling rate in Hz"),
    Field("synth.kin_fs", 100.0, _float, "kinematics sampling rate in Hz"),
    Field("synth.lead_time_ms", 800.0, _float, "signature lead before turn onset"),
    Field("synth.snr_db", 0.0, _float, "signature peak to background RMS ratio; -inf disables it"),
    Field("synth.turn_fraction", 0.2, _float, "target share of turning time"),
    Field("synth.line_noise_hz", 50.0, _float, "mains frequency"),
    Field("thresholds.mode", "explicit", _choice("explicit", "estimate"), "explicit values or density estimate"),
    Field("thresholds.v_th", 0.5, _float, "stop speed threshold in m/s"),
    Field("thresholds.omega_th", 0.05, _float, "turn yaw-rate threshold in rad/s"),
    Field("prep.pipeline", "ZscoreOnly", _choice(*(p.value for p in Pipeline)), "preprocessing chain"),
    Field("prep.band", (1.0, 40.0), _band, "band-pass edges in Hz"),
    Field("window.length_s", 1.0, _float, "window length in s"),
    Field("window.overlap", 0.5, _float, "fractional window overlap"),
    Field("window.aggregation", "Reject", _choice(*(a.value for a in Aggregation)), "window label rule"),
    Field("split.strategy", "LabelStratifiedTemporal", _choice(*(s.value for s in SplitStrategy)), "split scheme"),
    Field("split.train_frac", 0.7, _float, "share of each class (or of time) used for training"),
    Field("split.val_frac", 0.15, _float, "share of the training part held out for validation"),
    Field("split.oversample", True, _bool, "randomly oversample minority classes in training"),
    Field("split.seed", 0, _int, "oversampling seed"),
    Field("model.arch", "CompactConv", _choice(*ARCHITECTURES), "model family"),
    Field("train.batch_size", 128, _int, "mini-batch size"),
    Field("train.max_epochs", 100, _int, "epoch budget"),
    Field("train.patience", 10, _int, "epochs without validation improvement before stopping"),
    Field("train.learning_rate", 0.001, _float, "Adam step size"),
    Field("train.class_weights", "inverse-frequency", _choice("inverse-frequency", "uniform"), "loss weighting"),
    Field("train.seed", 0, _int, "initialisation and shuffling seed"),
)

_BY_KEY = {f.key: f for f in FIELDS}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    synth: SynthConfig
    sessions: int
    thresholds: Thresholds | None
    prep: PrepConfig
    window: WindowSpec
    split: SplitConfig
    horizons: tuple[int, ...]
    channels: tuple[str, ...]
    arch: str
    train: TrainConfig
    output_dir: Path

    def session_config(self, index: int) -> SynthConfig:
        """Generator settings of session ``index`` (0-based)."""
        return replace(self.synth, seed=self.synth.seed + index)

    @property
    def session_ids(self) -> range:
        return range(1, self.sessions + 1)

    def model_spec(self, n_samples: int) -> ModelSpec:
        return ModelSpec(arch=self.arch, n_channels=len(self.channels), n_samples=n_samples)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        values = dict(self.values)
        for key, value in overrides.items():
            values[key.replace("__", ".")] = value
        return build(values)

    def render(self) -> str:
        return render(self.values)


def build(values: dict) -> ExperimentConfig:
    """Validate resolved values and assemble the typed configuration."""
    v = {f.key: values.get(f.key, f.default) for f in FIELDS}
    unknown = set(values) - set(_BY_KEY)
    if unknown:
        raise ConfigError(f"unknown configuration key {sorted(unknown)[0]!r}")

    def guard(key, make):
        try:
            return make()
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    if v["experiment.sessions"] < 1:
        raise ConfigError("experiment.sessions: must be >= 1")
    channels = v["experiment.channels"]
    channels = CHANNEL_SETS[channels] if isinstance(channels, str) else tuple(channels)
    unknown_ch = [c for c in channels if c not in DEFAULT_CHANNELS]
    if unknown_ch:
        raise ConfigError(f"experiment.channels: unknown channel {unknown_ch[0]!r}")
    if len(set(channels)) != len(channels):
        raise ConfigError("experiment.channels: duplicate channel names")

    synth = guard(
        "synth",
        lambda: SynthConfig(
            seed=v["synth.seed"],
            duration=v["synth.duration"],
            eeg_fs=v["synth.eeg_fs"],
            kin_fs=v["synth.kin_fs"],
            lead_time=v["synth.lead_time_ms"],
            snr_db=v["synth.snr_db"],
            turn_fraction=v["synth.turn_fraction"],
            line_noise_hz=v["synth.line_noise_hz"],
        ),
    )
    thresholds = None
    if v["thresholds.mode"] == "explicit":
        thresholds = guard("thresholds", lambda: Thresholds(v["thresholds.v_th"], v["thresholds.omega_th"]))
    prep = PrepConfig(Pipeline.parse(v["prep.pipeline"]), tuple(v["prep.band"]))
    if prep.pipeline is Pipeline.BANDPASS_ZSCORE:
        guard("prep.band", lambda: prep.validate(synth.eeg_fs))
    if v["window.length_s"] not in WINDOW_LENGTHS_S:
        raise ConfigError(f"window.length_s: allowed values are {_fmt(WINDOW_LENGTHS_S)}")
    if v["window.overlap"] not in OVERLAPS:
        raise ConfigError(f"window.overlap: allowed values are {_fmt(OVERLAPS)}")
    window = WindowSpec(v["window.length_s"], v["window.overlap"], Aggregation(v["window.aggregation"]))
    guard("window.length_s", lambda: window.width(synth.eeg_fs))
    split = guard(
        "split",
        lambda: SplitConfig(
            SplitStrategy(v["split.strategy"]),
            v["split.train_frac"],
            v["split.val_frac"],
            v["split.oversample"],
            v["split.seed"],
        ),
    )
    train = guard(
        "train",
        lambda: TrainConfig(
            batch_size=v["train.batch_size"],
            max_epochs=v["train.max_epochs"],
            patience=v["train.patience"],
            learning_rate=v["train.learning_rate"],
            seed=v["train.seed"],
            class_weighting=v["train.class_weights"],
        ),
    )
    cfg = ExperimentConfig(
        values=v,
        synth=synth,
        sessions=v["experiment.sessions"],
        thresholds=thresholds,
        prep=prep,
        window=window,
        split=split,
        horizons=tuple(v["experiment.horizons"]),
        channels=channels,
        arch=v["model.arch"],
        train=train,
        output_dir=Path(v["experiment.output_dir"]),
    )
    guard("model", lambda: cfg.model_spec(window.width(synth.eeg_fs)))
    return cfg


def parse_text(text: str, source: str = "<config>") -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, _, value = (part.strip() for part in line.partition("="))
        field = _BY_KEY.get(key)
        if field is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = field.parse(value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
    return values


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a config file (``None`` means all defaults) and apply keyword overrides.

    Override names use ``__`` for the dot, e.g. ``synth__seed=3``.
    """
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise FileError(f"cannot read config {path}: {exc}") from exc
        values = parse_text(text, str(path))
    for key, value in overrides.items():
        values[key.replace("__", ".")] = value
    return build(values)


def render(values: dict) -> str:
    lines = ["# resolved m2d configuration"]
    section = None
    for f in FIELDS:
        sec = f.key.split(".")[0]
        if sec != section:
            lines.append("")
            section = sec
        lines.append(f"{f.key} = {_fmt(values.get(f.key, f.default))}")
    return "\n".join(lines) + "\n"


def write_resolved(cfg: ExperimentConfig, directory) -> Path:
    path = Path(directory) / "config.txt"
    try:
        path.write_text(cfg.render(), encoding="utf-8")
    except OSError as exc:
        raise FileError(f"cannot write resolved config {path}: {exc}") from exc
    return path


__all__ = [
    "CHANNEL_SETS",
    "DEFAULT_HORIZONS",
    "FIELDS",
    "ExperimentConfig",
    "build",
    "load_config",
    "parse_text",
    "render",
    "write_resolved",
]
