"""Silence filtering, mask smoothing, 5 s windowing, time masking and class balancing."""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .audio_io import AudioClip
from .dsp import DEFAULT_STFT, StftConfig, WINDOW_SECONDS, _taper, frame_signal

CRYING = "crying"
NOT_CRYING = "not_crying"
MIXED = "mixed"
UNLABELED = "unlabeled"

BAND_EDGE_HZ = 350.0
SILENCE_DB = -60.0
MIN_RUN_SECONDS = 5
MAX_GAP_SECONDS = 5
MAX_MASK_SECONDS = 0.44


@dataclass(frozen=True)
class WindowInstance:
    samples: np.ndarray
    start: int
    label: str = UNLABELED
    recording_id: str = ""
    participant_id: str = ""
    augmented: bool = False
    padded: bool = False

    @property
    def key(self) -> str:
        return f"{self.recording_id}:{self.start}"


def band_levels(clip: AudioClip, band_hz: float = BAND_EDGE_HZ, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Per-second mean-square level (dBFS) of the content at or above ``band_hz``.

    Each second is analysed with a Hann STFT; the band power of every frame is
    scaled by the window energy so that a full-scale square wave reads ~0 dB.
    """
    sr = clip.sample_rate
    n_sec = int(len(clip.samples) // sr)
    seg = cfg.samples_per_segment
    w = _taper(cfg.window, seg)
    freqs = np.arange(seg // 2 + 1) * sr / seg
    in_band = freqs >= band_hz
    # one-sided spectrum: every bin except DC and Nyquist stands for two
    weight = np.where((np.arange(len(freqs)) == 0) | ((seg % 2 == 0) & (np.arange(len(freqs)) == seg // 2)), 1.0, 2.0)
    weight = weight * in_band
    seconds = np.asarray(clip.samples[: n_sec * sr]).reshape(n_sec, sr)
    out = np.empty(n_sec)
    for i, sec in enumerate(seconds):
        spec = np.fft.rfft(frame_signal(sec, seg, cfg.hop) * w, axis=1)
        ms = ((spec.real ** 2 + spec.imag ** 2) @ weight).mean() / (seg * (w ** 2).sum())
        out[i] = 10.0 * np.log10(ms) if ms > 0 else -np.inf
    return out


def silence_filter(clip: AudioClip, threshold_db: float = SILENCE_DB, band_hz: float = BAND_EDGE_HZ) -> np.ndarray:
    """Boolean per-second mask: True where the >= band_hz level reaches ``threshold_db``."""
    if len(clip.samples) < clip.sample_rate:
        raise ValueError("silence_filter needs at least one second of audio")
    return band_levels(clip, band_hz) >= threshold_db


def runs(mask) -> list[tuple[bool, int, int]]:
    """Maximal runs of equal values as (value, start, stop)."""
    m = np.asarray(mask, dtype=bool)
    if m.size == 0:
        return []
    edges = np.flatnonzero(np.diff(m.astype(np.int8))) + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [m.size]])
    return [(bool(m[a]), int(a), int(b)) for a, b in zip(starts, stops)]


def bridge_gaps(mask, max_gap: int) -> np.ndarray:
    """Set False runs of length <= max_gap lying strictly between True runs to True."""
    m = np.array(mask, dtype=bool)
    rs = runs(m)
    for i, (val, a, b) in enumerate(rs):
        if not val and 0 < i < len(rs) - 1 and b - a <= max_gap:
            m[a:b] = True
    return m


def drop_short(mask, min_len: int, inclusive: bool = False) -> np.ndarray:
    """Clear True runs shorter than min_len (or <= min_len when ``inclusive``)."""
    m = np.array(mask, dtype=bool)
    for val, a, b in runs(m):
        if val and (b - a < min_len or (inclusive and b - a == min_len)):
            m[a:b] = False
    return m


def smooth_mask(mask) -> np.ndarray:
    """Bridge inactive gaps of <= 5 s, then drop active runs shorter than 5 s."""
    return drop_short(bridge_gaps(mask, MAX_GAP_SECONDS), MIN_RUN_SECONDS)


def _window_label(second_labels, start: int) -> str:
    if second_labels is None:
        return UNLABELED
    span = np.asarray(second_labels[start:start + WINDOW_SECONDS], dtype=bool)
    if len(span) == WINDOW_SECONDS and span.all():
        return CRYING
    if not span.any():
        return NOT_CRYING
    return MIXED


def make_windows(clip: AudioClip, mask=None, labels=None) -> list[WindowInstance]:
    """Cut 5 s windows at a 1 s hop inside every active run of at least 5 s.

    ``labels`` is a per-second crying flag array or anything with a
    ``seconds(n)`` method (e.g. a LabelTrack). A window is ``crying`` when all
    five seconds are crying, ``not_crying`` when none are, otherwise ``mixed``.
    """
    sr = clip.sample_rate
    n_sec = int(len(clip.samples) // sr)
    mask = np.ones(n_sec, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if labels is not None and hasattr(labels, "seconds"):
        labels = labels.seconds(len(mask))
    win = WINDOW_SECONDS * sr
    out = []
    for val, a, b in runs(mask):
        if not val or b - a < WINDOW_SECONDS:
            continue
        for start in range(a, b - WINDOW_SECONDS + 1):
            seg = clip.samples[start * sr: start * sr + win]
            padded = len(seg) < win
            if padded:
                seg = np.concatenate([seg, np.zeros(win - len(seg))])
            out.append(WindowInstance(np.asarray(seg), start, _window_label(labels, start),
                                      clip.recording_id, clip.participant_id, padded=padded))
    return out


def drop_mixed(instances):
    return [w for w in instances if w.label != MIXED]


def time_mask_augment(window: WindowInstance, rng_seed, sample_rate: int = 22050,
                      max_seconds: float = MAX_MASK_SECONDS) -> WindowInstance:
    """Zero one contiguous span of (0, max_seconds] seconds at a uniform position."""
    if window.label != CRYING:
        raise ValueError(f"time masking applies to crying windows only, got {window.label!r}")
    rng = np.random.default_rng(rng_seed)
    max_len = int(max_seconds * sample_rate)
    length = int(np.ceil((1.0 - rng.random()) * max_len))
    length = min(max(length, 1), max_len, len(window.samples))
    offset = int(rng.integers(0, len(window.samples) - length + 1))
    x = np.array(window.samples, copy=True)
    x[offset:offset + length] = 0.0
    return replace(window, samples=x, augmented=True)


def _mask_seed(rng_seed: int, window: WindowInstance) -> list[int]:
    # independent of list position so a window always gets the same mask
    return [int(rng_seed), zlib.crc32(window.recording_id.encode()), int(window.start)]


def balance(instances, rng_seed: int = 0, sample_rate: int = 22050):
    """Add one time-masked copy per crying window, then subsample not-crying to match."""
    cry = [w for w in instances if w.label == CRYING]
    neg = [w for w in instances if w.label == NOT_CRYING]
    if not cry or not neg:
        raise ValueError(f"balance needs both classes (crying={len(cry)}, not_crying={len(neg)})")
    dup = [time_mask_augment(w, _mask_seed(rng_seed, w), sample_rate) for w in cry]
    target = 2 * len(cry)
    if len(neg) > target:
        rng = np.random.default_rng([int(rng_seed), 1])
        keep = np.sort(rng.choice(len(neg), size=target, replace=False))
        neg = [neg[i] for i in keep]
    return cry + dup + neg


def write_window_manifest(path, instances) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["recording_id", "start_s", "label", "augmented"])
        for inst in instances:
            w.writerow([inst.recording_id, inst.start, inst.label, int(inst.augmented)])
