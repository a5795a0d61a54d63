"""Short-time spectra, HTK mel filterbank and the 225x225 log-mel image."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio_io import SAMPLE_RATE

WINDOW_SECONDS = 5
WINDOW_SAMPLES = WINDOW_SECONDS * SAMPLE_RATE  # 110250
IMAGE_SIZE = 225
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class StftConfig:
    samples_per_segment: int = 980
    overlap: int = 490
    window: str = "hann"

    def __post_init__(self):
        if not 0 <= self.overlap < self.samples_per_segment:
            raise ValueError("overlap must satisfy 0 <= overlap < samples_per_segment")
        if self.window not in ("hann", "rect"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def hop(self) -> int:
        return self.samples_per_segment - self.overlap


DEFAULT_STFT = StftConfig()
# zero padding that turns a 5 s window into exactly 225 frames
IMAGE_PAD = (IMAGE_SIZE - 1) * DEFAULT_STFT.hop + DEFAULT_STFT.samples_per_segment - WINDOW_SAMPLES


@lru_cache(maxsize=8)
def _taper(kind: str, n: int) -> np.ndarray:
    if kind == "rect":
        return np.ones(n)
    # periodic Hann, as used by scipy.signal.stft
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, length: int, hop: int) -> np.ndarray:
    """Strided (frames, length) view; trailing samples that do not fill a frame are dropped."""
    x = np.ascontiguousarray(x)
    n_frames = (len(x) - length) // hop + 1
    return np.lib.stride_tricks.as_strided(
        x, shape=(n_frames, length), strides=(hop * x.strides[0], x.strides[0]), writeable=False
    )


def stft_power(samples, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Power spectrogram of shape (seg // 2 + 1, frames)."""
    x = np.asarray(samples, dtype=np.float64)
    seg = cfg.samples_per_segment
    if x.ndim != 1 or len(x) < seg:
        raise ValueError(f"need at least {seg} samples, got {x.shape}")
    frames = frame_signal(x, seg, cfg.hop) * _taper(cfg.window, seg)
    spec = np.fft.rfft(frames, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(n_mels: int, sample_rate: float, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=16)
def _filterbank(n_mels: int, n_fft: int, sample_rate: float, fmin: float, fmax: float) -> np.ndarray:
    n_bins = n_fft // 2 + 1
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if n_mels > n_bins:
        raise ValueError(f"n_mels={n_mels} exceeds the {n_bins} usable FFT bins")
    bin_hz = np.arange(n_bins) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_hz[None, :] - lo) / (mid - lo)
    down = (hi - bin_hz[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    # filters narrower than one bin spacing would be empty: give them their nearest bin
    empty = fb.sum(axis=1) == 0
    if np.any(empty):
        nearest = np.clip(np.round(mid[empty, 0] * n_fft / sample_rate).astype(int), 0, n_bins - 1)
        fb[np.flatnonzero(empty), nearest] = 1.0
    fb.setflags(write=False)
    return fb


def mel_filterbank(n_mels: int = IMAGE_SIZE, n_fft: int = 980, sample_rate: float = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters centred on an even HTK-mel grid from ``fmin`` to ``fmax`` (Nyquist).

    Returns an (n_mels, n_fft // 2 + 1) read-only array.
    """
    fmax = sample_rate / 2.0 if fmax is None else float(fmax)
    return _filterbank(int(n_mels), int(n_fft), float(sample_rate), float(fmin), fmax)


@dataclass(frozen=True)
class MelImage:
    values: np.ndarray  # (225, 225): mel bins x frames
    start: float = 0.0

    def __post_init__(self):
        if self.values.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise ValueError(f"mel image must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {self.values.shape}")


def log_mel(window_samples, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Unstandardized log-mel matrix of a 5 s window."""
    x = np.asarray(window_samples, dtype=np.float64)
    if x.shape != (WINDOW_SAMPLES,):
        raise ValueError(f"mel image input must hold exactly {WINDOW_SAMPLES} samples, got {x.shape}")
    x = np.concatenate([x, np.zeros(IMAGE_PAD)])
    power = stft_power(x, DEFAULT_STFT)
    fb = mel_filterbank(IMAGE_SIZE, DEFAULT_STFT.samples_per_segment, sample_rate)
    return np.log(fb @ power + LOG_FLOOR)


def standardize_image(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    if sd < 1e-12:
        return np.zeros_like(values)
    return (values - values.mean()) / sd


def mel_image(window_samples, start: float = 0.0, sample_rate: int = SAMPLE_RATE) -> MelImage:
    """Log-mel image of one 5 s window, standardized to zero mean and unit variance."""
    return MelImage(standardize_image(log_mel(window_samples, sample_rate)), float(start))


def dump_image(image: MelImage, path, fmt: str = "csv") -> None:
    """Debug dump: CSV text grid or raw little-endian float32 (row-major, 225x225)."""
    if fmt == "csv":
        np.savetxt(path, image.values, delimiter=",", fmt="%.9g")
    elif fmt == "f32":
        image.values.astype("<f4").tofile(path)
    else:
        raise ValueError(f"unknown dump format {fmt!r}")


def read_image_dump(path, fmt: str = "csv") -> np.ndarray:
    if fmt == "csv":
        return np.loadtxt(path, delimiter=",")
    return np.fromfile(path, dtype="<f4").reshape(IMAGE_SIZE, IMAGE_SIZE)
