"""The four detector variants wired end to end.

``af``        SVM on 102 acoustic features
``cnn``       modified AlexNet on log-mel images
``dsf_af``    SVM on 1000 deep-spectrum features followed by the 102 acoustic features
``embed_svm`` SVM on externally extracted 128-d window embeddings
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import svm
from .detect import smooth_timeline, windows_to_seconds
from .dsp import WINDOW_SECONDS, mel_image
from .features import second_rows, summarize, window_features
from .nn import CnnModel, TrainConfig, train
from .preprocess import (CRYING, SILENCE_DB, balance, drop_mixed, make_windows, silence_filter,
                         smooth_mask)

log = logging.getLogger(__name__)

VARIANTS = ("af", "cnn", "dsf_af", "embed_svm")
AUG_SUFFIX = ":masked"


def window_key(w) -> str:
    return w.key + (AUG_SUFFIX if w.augmented else "")


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "dsf_af"
    preset: str = "desk"
    train: TrainConfig = field(default_factory=TrainConfig)
    svm_c: float = 1.0
    svm_gamma: float | None = None
    svm_tol: float = 1e-3
    silence_db: float = SILENCE_DB
    embeddings: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.variant == "embed_svm" and not self.embeddings:
            raise ValueError("the embed_svm variant needs an embeddings file")

    def fit(self, entries, seed: int = 0) -> "Detector":
        return fit_detector(self, entries, seed)


def _acoustic(windows, rows_by_rec) -> np.ndarray:
    out = np.empty((len(windows), 3 * 34))
    for i, w in enumerate(windows):
        rows = rows_by_rec.get(w.recording_id)
        if rows is not None and not w.augmented and not w.padded and w.start + WINDOW_SECONDS <= len(rows):
            out[i] = summarize(rows[w.start:w.start + WINDOW_SECONDS])
        else:
            out[i] = window_features(w.samples).values
    return out


def _images(windows) -> np.ndarray:
    return np.stack([mel_image(w.samples).values.astype(np.float32) for w in windows])


class Detector:
    """A fitted variant that turns a clip into a smoothed per-second crying timeline."""

    def __init__(self, spec: ModelSpec, svm_model=None, cnn=None, embeddings=None):
        self.spec = spec
        self.svm_model = svm_model
        self.cnn = cnn
        self._embeddings = embeddings

    def _embedding_lookup(self):
        if self._embeddings is None:
            keys, mat = svm.load_embeddings(self.spec.embeddings)
            self._embeddings = dict(zip(keys, mat))
        return self._embeddings

    def window_matrix(self, windows, rows_by_rec=None) -> np.ndarray:
        """Feature matrix the SVM consumes (not used by the cnn variant)."""
        v = self.spec.variant
        if v == "embed_svm":
            table = self._embedding_lookup()
            keys = [window_key(w) for w in windows]
            missing = [k for k in keys if k not in table]
            if missing:
                raise KeyError(f"{len(missing)} windows lack embeddings, e.g. {missing[:5]}")
            return np.array([table[k] for k in keys])
        acoustic = _acoustic(windows, rows_by_rec or {})
        if v == "af":
            return acoustic
        deep = self.cnn.deep_features(_images(windows))
        return np.array([svm.concat_dsf_af(d, a) for d, a in zip(deep, acoustic)])

    def predict_windows(self, windows, rows_by_rec=None) -> np.ndarray:
        """Boolean crying decision per window."""
        if not windows:
            return np.zeros(0, dtype=bool)
        if self.spec.variant == "cnn":
            logits = self.cnn.forward(_images(windows))
            return logits[:, 1] > logits[:, 0]
        return self.svm_model.decision_function(self.window_matrix(windows, rows_by_rec)) > 0

    def analyse(self, clip) -> dict:
        """All intermediate per-second products for one clip."""
        n_sec = int(len(clip.samples) // clip.sample_rate)
        raw_mask = silence_filter(clip, self.spec.silence_db) if n_sec >= 1 else np.zeros(0, dtype=bool)
        mask = smooth_mask(raw_mask)
        windows = make_windows(clip, mask)
        rows = {clip.recording_id: second_rows(clip.samples, clip.sample_rate)} if windows and self.spec.variant in ("af", "dsf_af") else {}
        decisions = self.predict_windows(windows, rows)
        binned = windows_to_seconds([(w.start, bool(d)) for w, d in zip(windows, decisions)], n_sec, mask)
        return {"active_raw": raw_mask, "active": mask, "window_starts": [w.start for w in windows],
                "window_crying": decisions, "binned": binned, "crying": smooth_timeline(binned)}

    def predict_seconds(self, clip) -> np.ndarray:
        return self.analyse(clip)["crying"]

    def save(self, out_dir) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        if self.cnn is not None:
            self.cnn.save(os.path.join(out_dir, "cnn"))
            written += ["cnn.json", "cnn.bin"]
        if self.svm_model is not None:
            svm.save_model(self.svm_model, os.path.join(out_dir, "svm"))
            written += ["svm.json", "svm.bin"]
        desc = {"spec": {**asdict(self.spec), "train": asdict(self.spec.train)}}
        with open(os.path.join(out_dir, "detector.json"), "w") as f:
            json.dump(desc, f, indent=2, sort_keys=True)
            f.write("\n")
        return written + ["detector.json"]

    @classmethod
    def load(cls, model_dir) -> "Detector":
        with open(os.path.join(model_dir, "detector.json")) as f:
            desc = json.load(f)["spec"]
        desc["train"] = TrainConfig(**desc["train"])
        spec = ModelSpec(**desc)
        cnn = CnnModel.load(os.path.join(model_dir, "cnn")) if spec.variant in ("cnn", "dsf_af") else None
        model = svm.load_model(os.path.join(model_dir, "svm")) if spec.variant != "cnn" else None
        return cls(spec, model, cnn)


def training_windows(entries, seed: int):
    """Labelled, mixed-free, balanced training windows plus per-recording feature rows."""
    windows, rows = [], {}
    for e in entries:
        clip = e.load_clip()
        track = e.load_track(clip.duration)
        windows += drop_mixed(make_windows(clip, None, track))
        rows[clip.recording_id] = clip
    balanced = balance(windows, seed)
    return balanced, rows


def fit_detector(spec: ModelSpec, entries, seed: int = 0) -> Detector:
    entries = list(entries)
    if not entries:
        raise ValueError("no training recordings")
    windows, clips = training_windows(entries, seed)
    y = np.array([1 if w.label == CRYING else 0 for w in windows])
    log.info("training %s on %d windows (%d crying)", spec.variant, len(windows), int(y.sum()))
    cnn = None
    if spec.variant in ("cnn", "dsf_af"):
        cnn = CnnModel(preset=spec.preset, seed=seed)
        cfg = spec.train if spec.train.rng_seed == seed else TrainConfig(**{**asdict(spec.train), "rng_seed": seed})
        history = train(cnn, _images(windows), y, cfg)
        cnn.meta = {"loss_history": [float(v) for v in history], "n_train": int(len(windows))}
    detector = Detector(spec, None, cnn)
    if spec.variant == "cnn":
        return detector
    rows = {}
    if spec.variant in ("af", "dsf_af"):
        rows = {rid: second_rows(c.samples, c.sample_rate) for rid, c in clips.items()}
    X = detector.window_matrix(windows, rows)
    detector.svm_model = svm.fit(X, np.where(y == 1, 1, -1), spec.svm_c, spec.svm_gamma, spec.svm_tol, seed)
    return detector


def required_embedding_keys(entries, silence_db: float = SILENCE_DB) -> list[str]:
    """Every window key an ``embed_svm`` run over ``entries`` may look up.

    Covers labelled training windows (with the ``:masked`` twin of each crying
    window, whose mask depends only on seed, recording and start) and the
    windows kept by the silence filter at prediction time.
    """
    keys = set()
    for e in entries:
        clip = e.load_clip()
        for w in drop_mixed(make_windows(clip, None, e.load_track(clip.duration))):
            keys.add(w.key)
            if w.label == CRYING:
                keys.add(w.key + AUG_SUFFIX)
        if int(clip.duration) >= 1:
            keys.update(w.key for w in make_windows(clip, smooth_mask(silence_filter(clip, silence_db))))
    return sorted(keys)
