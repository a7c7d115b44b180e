"""Pipeline stages that communicate through files under the output directory.

Layout::

    config.txt                         resolved configuration
    synth/session_NNN/                 kinematics.csv, eeg.csv, schedule.csv
    label/session_NNN.csv              per-EEG-sample labels; thresholds.txt
    build/hNNNN/                       train.m2d, val.m2d, test.m2d, build_log.txt
    train/hNNNN/                       model.m2dc, train_log.csv
    eval/                              hNNNN.json per horizon, horizons.csv
    summary.txt                        report

Each stage writes into a hidden staging directory that is renamed into place
only when the stage succeeds, so a failing stage leaves no partial output.
"""

from __future__ import annotations

import contextlib
import json
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset, kinlab, sigprep, synthgen
from .config import ExperimentConfig, write_resolved
from .errors import FileError, InvalidInputError, M2DError
from .kinlab import MODEL_ACTIONS, LabelSeries, Thresholds
from .metrics import evaluate, write_report
from .mlcore import load_checkpoint, predict, save_checkpoint, train

log = logging.getLogger(__name__)

STAGES = ("synth", "label", "build", "train", "eval", "report")
PARTS = ("train", "val", "test")
HORIZONS_FILE = "horizons.csv"
SUMMARY_FILE = "summary.txt"
THRESHOLDS_FILE = "thresholds.txt"
HORIZON_COLUMNS = ("horizon_ms", "macro_f1", "balanced_accuracy", "accuracy") + tuple(
    f"recall_{a.short}" for a in MODEL_ACTIONS
)


def session_dir(out: Path, sid: int) -> Path:
    return out / "synth" / f"session_{sid:03d}"


def labels_path(out: Path, sid: int) -> Path:
    return out / "label" / f"session_{sid:03d}.csv"


def horizon_tag(h: int) -> str:
    return f"h{h:04d}"


def derived_seed(master: int, horizon: int) -> int:
    """Per-horizon seed, independent of evaluation order."""
    return int(np.random.SeedSequence([master, horizon]).generate_state(1)[0])


def worker_count() -> int:
    raw = os.environ.get("M2D_THREADS", "")
    try:
        n = int(raw) if raw else 1
    except ValueError:
        log.warning("ignoring non-integer M2D_THREADS=%r", raw)
        n = 1
    return max(1, n)


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileError(f"missing input {path}; run `m2d {producer}` first")
    return path


@contextlib.contextmanager
def _stage(out: Path, name: str):
    final = out / name
    tmp = out / f".{name}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)


def _prepare(cfg: ExperimentConfig) -> Path:
    out = cfg.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FileError(f"cannot create output directory {out}: {exc}") from exc
    write_resolved(cfg, out)
    return out


# -- stages -------------------------------------------------------------------


def run_synth(cfg: ExperimentConfig) -> Path:
    out = _prepare(cfg)
    with _stage(out, "synth") as tmp:
        for i, sid in enumerate(cfg.session_ids):
            ses = synthgen.gen_session(cfg.session_config(i), sid)
            directory = tmp / f"session_{sid:03d}"
            directory.mkdir()
            synthgen.export_session(ses.schedule, ses.track, ses.eeg, directory)
            log.info("session %d: %d segments, turn share %.3f", sid, len(ses.schedule.segments), ses.schedule.turn_share())
    return out / "synth"


def _read_tracks(cfg: ExperimentConfig, out: Path) -> dict[int, kinlab.KinematicTrack]:
    return {
        sid: kinlab.read_kinematics(_require(session_dir(out, sid) / synthgen.KINEMATICS_FILE, "synth"))
        for sid in cfg.session_ids
    }


def _read_eeg(cfg: ExperimentConfig, out: Path, sid: int) -> synthgen.EegRecording:
    return synthgen.read_eeg(_require(session_dir(out, sid) / synthgen.EEG_FILE, "synth"), cfg.synth.eeg_fs)


def run_label(cfg: ExperimentConfig) -> Path:
    out = _prepare(cfg)
    tracks = _read_tracks(cfg, out)
    th = cfg.thresholds
    if th is None:
        th = kinlab.estimate_thresholds(list(tracks.values()))
        log.info("estimated thresholds v_th=%.4f omega_th=%.4f", th.v_th, th.omega_th)
    with _stage(out, "label") as tmp:
        (tmp / THRESHOLDS_FILE).write_text(f"v_th = {th.v_th!r}\nomega_th = {th.omega_th!r}\n", encoding="utf-8")
        for sid, track in tracks.items():
            eeg = _read_eeg(cfg, out, sid)
            aligned = sigprep.resample_to_eeg(track, eeg.timestamps)
            labels = kinlab.classify(aligned.v, aligned.psi_dot, aligned.delta_theta, th)
            kinlab.write_labels(LabelSeries(eeg.timestamps, labels), tmp / f"session_{sid:03d}.csv")
    return out / "label"


def read_thresholds(path: Path) -> Thresholds:
    values = {}
    for line in _require(path, "label").read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            values[key.strip()] = float(value)
    try:
        return Thresholds(values["v_th"], values["omega_th"])
    except KeyError as exc:
        raise InvalidInputError(f"{path}: missing {exc.args[0]}") from None


def build_horizon_sets(cfg: ExperimentConfig, sessions, horizon: int):
    """Pooled train/val/test example sets for one horizon plus a build log text."""
    parts: dict[str, list] = {p: [] for p in PARTS}
    lines = ["session,part,forward,turn_left,turn_right,rejected_fraction"]
    for sid, eeg, labels in sessions:
        built, _, stats = dataset.build_session(eeg, labels, cfg.window, cfg.split, horizon, sid)
        for part in PARTS:
            ex = dataset.select_channels(built[part], cfg.channels)
            parts[part].append(ex)
            counts = ",".join(str(int(c)) for c in stats.counts[part])
            lines.append(f"{sid},{part},{counts},{stats.rejected_fraction:.6f}")
        lines.append(f"{sid},session,,,,{stats.session_rejected_fraction:.6f}")
    pooled = {p: dataset.ExampleSet.concat(v) for p, v in parts.items()}
    if cfg.split.oversample and len(pooled["train"]):
        pooled["train"] = dataset.oversample(pooled["train"], derived_seed(cfg.split.sampler_seed, horizon))
    for part in PARTS:
        counts = ",".join(str(int(c)) for c in pooled[part].class_counts())
        lines.append(f"all,{part},{counts},")
    return pooled, "\n".join(lines) + "\n"


def load_sessions(cfg: ExperimentConfig, out: Path):
    sessions = []
    for sid in cfg.session_ids:
        eeg = sigprep.preprocess(_read_eeg(cfg, out, sid), cfg.prep)
        labels = kinlab.read_labels(_require(labels_path(out, sid), "label"))
        sessions.append((sid, eeg, labels))
    return sessions


def run_build(cfg: ExperimentConfig) -> Path:
    out = _prepare(cfg)
    sessions = load_sessions(cfg, out)
    with _stage(out, "build") as tmp:
        for h in cfg.horizons:
            pooled, text = build_horizon_sets(cfg, sessions, h)
            directory = tmp / horizon_tag(h)
            directory.mkdir()
            for part in PARTS:
                dataset.write_cache(pooled[part], directory / f"{part}.m2d")
            (directory / "build_log.txt").write_text(text, encoding="utf-8")
            log.info("horizon %d ms: %s", h, {p: pooled[p].class_counts().tolist() for p in PARTS})
    return out / "build"


def _read_part(cfg: ExperimentConfig, out: Path, h: int, part: str) -> dataset.ExampleSet:
    path = _require(out / "build" / horizon_tag(h) / f"{part}.m2d", "build")
    return dataset.read_cache(path, cfg.channels)


def train_horizon(cfg: ExperimentConfig, train_set, val_set, horizon: int):
    spec = cfg.model_spec(train_set.shape[1])
    return train(spec, replace(cfg.train, seed=derived_seed(cfg.train.seed, horizon)), train_set, val_set)


def run_train(cfg: ExperimentConfig) -> Path:
    out = _prepare(cfg)
    with _stage(out, "train") as tmp:

        def job(h):
            result = train_horizon(cfg, _read_part(cfg, out, h, "train"), _read_part(cfg, out, h, "val"), h)
            directory = tmp / horizon_tag(h)
            directory.mkdir()
            save_checkpoint(result.checkpoint, directory / "model.m2dc")
            (directory / "train_log.csv").write_text(result.log_text(), encoding="utf-8")
            log.info("horizon %d ms: best epoch %d, val macro-F1 %.4f", h, result.checkpoint.epoch, result.checkpoint.val_macro_f1)

        with ThreadPoolExecutor(max_workers=min(worker_count(), len(cfg.horizons))) as pool:
            for _ in pool.map(job, cfg.horizons):
                pass
    return out / "train"


def horizon_row(h: int, rep) -> str:
    values = [rep.macro_f1, rep.balanced_accuracy, rep.accuracy, *rep.recall]
    return ",".join([str(h)] + [f"{v:.6f}" for v in values])


def run_eval(cfg: ExperimentConfig) -> Path:
    out = _prepare(cfg)
    rows = [",".join(HORIZON_COLUMNS)]
    with _stage(out, "eval") as tmp:
        for h in cfg.horizons:
            ckpt = load_checkpoint(_require(out / "train" / horizon_tag(h) / "model.m2dc", "train"))
            test = _read_part(cfg, out, h, "test")
            rep = evaluate(test.labels, predict(ckpt.model, test.windows))
            write_report(
                rep, tmp / f"{horizon_tag(h)}.json", horizon_ms=h, best_epoch=ckpt.epoch,
                val_macro_f1=round(float(ckpt.val_macro_f1), 6),
            )  # fmt: skip
            rows.append(horizon_row(h, rep))
        (tmp / HORIZONS_FILE).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return out / "eval" / HORIZONS_FILE


def read_horizons(path: Path) -> list[dict]:
    lines = _require(path, "eval").read_text(encoding="utf-8").splitlines()
    if not lines or tuple(lines[0].split(",")) != HORIZON_COLUMNS:
        raise InvalidInputError(f"{path}: unexpected header")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        rows.append({"horizon_ms": int(cells[0]), **{k: float(c) for k, c in zip(HORIZON_COLUMNS[1:], cells[1:])}})
    if not rows:
        raise InvalidInputError(f"{path}: no horizon rows")
    return rows


def optimal_horizon(rows: list[dict]) -> dict:
    """Row with the highest Macro-F1; ties go to the earliest horizon."""
    best = rows[0]
    for row in rows[1:]:
        if row["macro_f1"] > best["macro_f1"]:
            best = row
    return best


def render_report(rows: list[dict]) -> str:
    header = f"{'horizon_ms':>10}  {'macro_f1':>8}  {'bal_acc':>8}  {'accuracy':>8}"
    lines = [header] + [
        f"{r['horizon_ms']:>10}  {r['macro_f1']:>8.4f}  {r['balanced_accuracy']:>8.4f}  {r['accuracy']:>8.4f}"
        for r in rows
    ]
    best = optimal_horizon(rows)
    lines += ["", f"optimal horizon: {best['horizon_ms']} ms (Macro-F1 {best['macro_f1']:.4f})"]
    return "\n".join(lines) + "\n"


def run_report(cfg: ExperimentConfig) -> str:
    out = _prepare(cfg)
    text = render_report(read_horizons(out / "eval" / HORIZONS_FILE))
    (out / SUMMARY_FILE).write_text(text, encoding="utf-8")
    return text


STAGE_FUNCS = {
    "synth": run_synth,
    "label": run_label,
    "build": run_build,
    "train": run_train,
    "eval": run_eval,
    "report": run_report,
}


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Every stage in order through files.

    A failing stage re-raises its error prefixed with the stage name, and the
    outputs of stages completed by this run are removed.
    """
    out = cfg.output_dir
    done: list[Path] = []
    for name in STAGES:
        try:
            STAGE_FUNCS[name](cfg)
        except M2DError as exc:
            _remove(done)
            raise type(exc)(f"{name} stage: {exc}") from exc
        except BaseException:
            _remove(done)
            raise
        done.append(out / (SUMMARY_FILE if name == "report" else name))
    return read_horizons(out / "eval" / HORIZONS_FILE)


def _remove(paths):
    for path in paths:
        if path.is_dir():
            shutil.rmtree(path, ignore_errors=True)
        elif path.exists():
            path.unlink()


def metrics_document(path: Path) -> dict:
    return json.loads(_require(path, "eval").read_text(encoding="utf-8"))
