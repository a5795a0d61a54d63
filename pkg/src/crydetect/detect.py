"""Second-level timelines: annotation canonicalization, window binning, smoothing,
scoring and the leave-one-participant-out harness."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dsp import WINDOW_SECONDS
from .preprocess import CRYING, NOT_CRYING, bridge_gaps, drop_short

log = logging.getLogger(__name__)

MIN_EPISODE_SECONDS = 3.0
MERGE_GAP_SECONDS = 5.0
SMOOTH_SECONDS = 5


@dataclass(frozen=True)
class LabelTrack:
    intervals: tuple  # ((start_s, end_s, label), ...) sorted, gap-free
    total_duration: float

    def crying(self) -> list[tuple[float, float]]:
        return [(a, b) for a, b, lab in self.intervals if lab == CRYING]

    def seconds(self, n: int | None = None) -> np.ndarray:
        """Per-second crying flags; second s is crying when s + 0.5 falls in a crying interval."""
        n = int(self.total_duration) if n is None else int(n)
        mid = np.arange(n) + 0.5
        out = np.zeros(n, dtype=bool)
        for a, b in self.crying():
            out |= (mid >= a) & (mid < b)
        return out


def canonicalize_annotations(raw, total_duration: float) -> LabelTrack:
    """Merge crying intervals separated by <= 5 s, drop episodes shorter than 3 s,
    and fill everything else with not_crying."""
    eps = 1e-9
    ivs = []
    for a, b in raw:
        a, b = float(a), float(b)
        if b <= a:
            raise ValueError(f"interval end must exceed start: ({a}, {b})")
        if a < -eps or b > total_duration + eps:
            raise ValueError(f"interval ({a}, {b}) lies outside the recording (0, {total_duration})")
        ivs.append((max(a, 0.0), min(b, total_duration)))
    ivs.sort()
    merged = []
    for a, b in ivs:
        if merged and a - merged[-1][1] <= MERGE_GAP_SECONDS + eps:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    episodes = [(a, b) for a, b in merged if b - a >= MIN_EPISODE_SECONDS - eps]

    out, t = [], 0.0
    for a, b in episodes:
        if a > t:
            out.append((t, a, NOT_CRYING))
        out.append((a, b, CRYING))
        t = b
    if t < total_duration:
        out.append((t, float(total_duration), NOT_CRYING))
    return LabelTrack(tuple(out), float(total_duration))


@dataclass
class SecondTimeline:
    crying: np.ndarray
    participant_id: str = ""

    def __len__(self):
        return len(self.crying)


def windows_to_seconds(predictions, n_seconds: int, active_mask=None) -> np.ndarray:
    """A second is crying when any window predicted crying covers it.

    ``predictions`` is an iterable of (start_second, is_crying). Seconds outside
    ``active_mask`` are forced to not_crying.
    """
    out = np.zeros(int(n_seconds), dtype=bool)
    for start, is_cry in predictions:
        start = int(start)
        if start < 0 or start + WINDOW_SECONDS > n_seconds:
            raise ValueError(f"window at {start} s extends beyond the {n_seconds} s recording")
        if is_cry:
            out[start:start + WINDOW_SECONDS] = True
    if active_mask is not None:
        out &= np.asarray(active_mask, dtype=bool)[:n_seconds]
    return out


def smooth_timeline(crying) -> np.ndarray:
    """Fill not-crying gaps of <= 5 s between crying runs, then remove crying runs of <= 5 s."""
    return drop_short(bridge_gaps(crying, SMOOTH_SECONDS), SMOOTH_SECONDS, inclusive=True)


@dataclass
class Score:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def __add__(self, other):
        return Score(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def score(pred, truth) -> Score:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"timeline lengths differ: {pred.shape} vs {truth.shape}")
    return Score(int(np.sum(pred & truth)), int(np.sum(pred & ~truth)),
                 int(np.sum(~pred & truth)), int(np.sum(~pred & ~truth)))


@dataclass
class EvalResult:
    rows: dict = field(default_factory=dict)  # participant -> Score
    label: str = ""
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {"participants": len(self.rows)}
        for name in ("f1", "precision", "recall"):
            vals = np.array([getattr(s, name) for s in self.rows.values()])
            out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
        if self.label:
            out["label"] = self.label
        if self.notes:
            out["notes"] = list(self.notes)
        return out


METRIC_COLUMNS = ["participant", "TP", "FP", "FN", "TN", "P", "R", "F1"]


def write_metrics_csv(path, result: EvalResult) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for pid, s in result.rows.items():
            w.writerow([pid, s.tp, s.fp, s.fn, s.tn, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}"])


def write_summary_json(path, summaries: dict) -> None:
    with open(path, "w") as f:
        json.dump(summaries, f, indent=2, sort_keys=True)
        f.write("\n")


def _by_participant(entries) -> dict:
    groups = {}
    for e in entries:
        groups.setdefault(e.participant_id, []).append(e)
    return dict(sorted(groups.items()))


def evaluate_detector(detector, entries) -> dict:
    """Per-participant summed confusion counts of ``detector.predict_seconds`` against truth."""
    rows = {}
    for pid, group in _by_participant(entries).items():
        total = Score(0, 0, 0, 0)
        for e in group:
            pred = detector.predict_seconds(e.load_clip())
            truth = e.truth_seconds()
            total = total + score(pred, truth[: len(pred)])
        if total.tp + total.fp + total.fn + total.tn == 0:
            raise ValueError(f"participant {pid} has no evaluable seconds")
        rows[pid] = total
    return rows


def _run_fold(args):
    model_spec, train, test, seed = args
    detector = model_spec.fit(train, seed)
    return evaluate_detector(detector, test)


def lopo_evaluate(entries, model_spec, seed: int = 0, jobs: int = 1) -> EvalResult:
    """Leave-one-participant-out: one fold per participant, trained on all others.

    ``model_spec.fit(entries, seed)`` must return an object exposing
    ``predict_seconds(clip) -> bool array``.
    """
    groups = _by_participant(entries)
    if len(groups) < 2:
        raise ValueError("LOPO needs at least two participants")
    folds = []
    for pid in groups:
        train = [e for p, g in groups.items() if p != pid for e in g]
        folds.append((model_spec, train, groups[pid], seed))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_run_fold, folds))
    else:
        parts = [_run_fold(f) for f in folds]
    result = EvalResult(label="lopo")
    for part in parts:
        result.rows.update(part)
    return result


def train_test_evaluate(train_entries, test_entries, model_spec, seed: int = 0) -> EvalResult:
    """Train once on ``train_entries`` and score every participant in ``test_entries``."""
    if not train_entries or not test_entries:
        raise ValueError("train and test manifests must both be non-empty")
    result = EvalResult(label="train_test")
    overlap = {e.participant_id for e in train_entries} & {e.participant_id for e in test_entries}
    if overlap:
        msg = f"participants in both train and test sets: {sorted(overlap)}"
        log.warning(msg)
        result.notes.append(msg)
    def audio(entries):
        return {os.path.realpath(e.wav_path) for e in entries}

    same = audio(train_entries) == audio(test_entries)
    if same:
        result.notes.append("resubstitution: train and test manifests are identical")
    detector = model_spec.fit(list(train_entries), seed)
    result.rows.update(evaluate_detector(detector, test_entries))
    return result
