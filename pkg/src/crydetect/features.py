"""Short-term acoustic features (34 per frame) and the 102-d per-window summary.

Feature order per frame::

    0  zero-crossing rate          1  energy              2  entropy of energy
    3  spectral centroid (Hz)      4  spectral spread (Hz)
    5  spectral entropy            6  spectral flux       7  spectral rolloff, 90% (Hz)
    8-20  MFCC 1..13               21-32  chroma vector   33 chroma deviation
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .audio_io import SAMPLE_RATE
from .dsp import WINDOW_SECONDS, frame_signal, mel_filterbank

N_FEATURES = 34
N_WINDOW_FEATURES = 3 * N_FEATURES
N_MFCC = 13
N_MFCC_FILTERS = 40
N_SUBBLOCKS = 10
ROLLOFF = 0.90
FRAME_SECONDS = 0.050
HOP_SECONDS = 0.025
MFCC_FLOOR = 1e-10

FEATURE_NAMES = (
    ["zcr", "energy", "energy_entropy", "spectral_centroid", "spectral_spread",
     "spectral_entropy", "spectral_flux", "spectral_rolloff"]
    + [f"mfcc_{i}" for i in range(1, N_MFCC + 1)]
    + [f"chroma_{i}" for i in range(1, 13)]
    + ["chroma_std"]
)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # [mean(34), median(34), std(34)]
    window_start: float = 0.0

    def __post_init__(self):
        if self.values.shape != (N_WINDOW_FEATURES,):
            raise ValueError(f"feature vector must have {N_WINDOW_FEATURES} entries")


def _safe_div(num, den):
    den = np.asarray(den, dtype=np.float64)
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


def _entropy(parts: np.ndarray) -> np.ndarray:
    """Shannon entropy (bits) over the last axis of non-negative parts; 0 for all-zero rows."""
    p = _safe_div(parts, parts.sum(axis=-1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def _chroma_map(n_bins: int, n_fft: int, sample_rate: float) -> np.ndarray:
    freqs = np.arange(1, n_bins) * sample_rate / n_fft
    pitch = np.round(12.0 * np.log2(freqs / 27.5)).astype(int) % 12
    m = np.zeros((n_bins, 12))
    m[np.arange(1, n_bins), pitch] = 1.0
    return m


def frame_features(frames, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """34 features for each row of ``frames`` (n_frames, frame_len).

    Spectral flux of row i is measured against row i-1; the first row gets 0.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n_frames, n = frames.shape
    if n == 0:
        raise ValueError("empty frame")
    out = np.zeros((n_frames, N_FEATURES))

    signs = np.sign(frames)
    out[:, 0] = np.abs(np.diff(signs, axis=1)).sum(axis=1) / 2.0 / max(n - 1, 1)
    out[:, 1] = (frames ** 2).sum(axis=1) / n
    sub = n // N_SUBBLOCKS
    if sub > 0:
        blocks = (frames[:, : sub * N_SUBBLOCKS] ** 2).reshape(n_frames, N_SUBBLOCKS, sub).sum(axis=2)
        out[:, 2] = _entropy(blocks)

    taper = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    mag = np.abs(np.fft.rfft(frames * taper, axis=1)) / n
    power = mag ** 2
    n_bins = mag.shape[1]
    freqs = np.arange(n_bins) * sample_rate / n
    mag_sum = mag.sum(axis=1)
    centroid = _safe_div(mag @ freqs, mag_sum)
    out[:, 3] = centroid
    out[:, 4] = np.sqrt(_safe_div((mag * (freqs[None, :] - centroid[:, None]) ** 2).sum(axis=1), mag_sum))

    band = n_bins // N_SUBBLOCKS
    if band > 0:
        bands = power[:, : band * N_SUBBLOCKS].reshape(n_frames, N_SUBBLOCKS, band).sum(axis=2)
        out[:, 5] = _entropy(bands)

    norm_mag = _safe_div(mag, mag_sum[:, None])
    if n_frames > 1:
        out[1:, 6] = ((norm_mag[1:] - norm_mag[:-1]) ** 2).sum(axis=1)

    total = power.sum(axis=1)
    cum = np.cumsum(power, axis=1)
    idx = np.argmax(cum >= ROLLOFF * total[:, None], axis=1)
    out[:, 7] = np.where(total > 0, freqs[idx], 0.0)

    fb = mel_filterbank(N_MFCC_FILTERS, n, sample_rate)
    log_mel = np.log10(power @ fb.T + MFCC_FLOOR)
    out[:, 8:8 + N_MFCC] = dct(log_mel, type=2, norm="ortho", axis=1)[:, :N_MFCC]

    chroma = _safe_div(power @ _chroma_map(n_bins, n, sample_rate), power[:, 1:].sum(axis=1, keepdims=True))
    out[:, 21:33] = chroma
    out[:, 33] = chroma.std(axis=1)
    return out


def short_term_features(frame, sample_rate: int = SAMPLE_RATE, previous=None) -> np.ndarray:
    """The 34-feature vector of a single frame (flux against ``previous`` when given)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1 or frame.size == 0:
        raise ValueError("short_term_features needs a non-empty 1-D frame")
    if previous is None:
        return frame_features(frame[None, :], sample_rate)[0]
    return frame_features(np.stack([np.asarray(previous, dtype=np.float64), frame]), sample_rate)[1]


def second_rows(samples, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Per-second feature rows for every whole second of ``samples``."""
    x = np.asarray(samples, dtype=np.float64)
    n_sec = len(x) // sample_rate
    flen = int(FRAME_SECONDS * sample_rate)
    hop = int(HOP_SECONDS * sample_rate)
    rows = np.empty((n_sec, N_FEATURES))
    for i, sec in enumerate(x[: n_sec * sample_rate].reshape(n_sec, sample_rate)):
        rows[i] = frame_features(frame_signal(sec, flen, hop), sample_rate).mean(axis=0)
    return rows


def per_second_features(window_samples, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """(5, 34) matrix: short-term features averaged over 50 ms / 25 ms frames in each second."""
    x = np.asarray(window_samples, dtype=np.float64)
    if x.shape != (WINDOW_SECONDS * sample_rate,):
        raise ValueError(f"window must hold exactly {WINDOW_SECONDS * sample_rate} samples, got {x.shape}")
    return second_rows(x, sample_rate)


def summarize(rows: np.ndarray) -> np.ndarray:
    """Concatenate column mean, median and population std."""
    return np.concatenate([rows.mean(axis=0), np.median(rows, axis=0), rows.std(axis=0)])


def window_features(window_samples, sample_rate: int = SAMPLE_RATE, start: float = 0.0) -> FeatureVector:
    return FeatureVector(summarize(per_second_features(window_samples, sample_rate)), float(start))


def write_feature_csv(path, rows) -> None:
    """Rows of (window_id, start, FeatureVector or array, label)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["window_id", "start_s"]
                   + [f"{stat}_{name}" for stat in ("mean", "median", "std") for name in FEATURE_NAMES]
                   + ["label"])
        for wid, start, vec, label in rows:
            values = vec.values if isinstance(vec, FeatureVector) else np.asarray(vec)
            w.writerow([wid, f"{start:g}"] + [repr(float(v)) for v in values] + [label])
