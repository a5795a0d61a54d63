"""WAV decoding, mono down-mixing and resampling to the canonical 22.05 kHz rate."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 22050


class AudioError(ValueError):
    """Raised when a file cannot be turned into a usable clip."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray  # float64 mono in [-1, 1]
    sample_rate: int = SAMPLE_RATE
    recording_id: str = ""
    participant_id: str = ""
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise AudioError("clip samples must be one-dimensional")
        if not np.all(np.isfinite(x)):
            raise AudioError("clip contains non-finite samples")
        object.__setattr__(self, "samples", np.clip(x, -1.0, 1.0))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if np.issubdtype(data.dtype, np.integer):
        return data.astype(np.float64) / float(-np.iinfo(data.dtype).min)
    if np.issubdtype(data.dtype, np.floating):
        return data.astype(np.float64)
    raise AudioError(f"unsupported sample type {data.dtype}")


def load_wav(path, recording_id: str | None = None, participant_id: str = "",
             target_rate: int | None = SAMPLE_RATE) -> AudioClip:
    """Read a PCM or float WAV file into a mono clip.

    Integer samples are divided by the magnitude of the type's minimum, so a
    16-bit value of 32767 maps to 32767/32768. Multichannel input is averaged
    to mono. The clip is resampled to ``target_rate`` unless it is None.
    """
    path = os.fspath(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise AudioError(f"{path}: no such file") from None
    except Exception as exc:  # scipy surfaces malformed headers as assorted exception types
        raise AudioError(f"{path}: cannot decode WAV ({exc})") from None
    x = _to_float(np.asarray(data))
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioError(f"{path}: zero-length audio")
    if not np.all(np.isfinite(x)):
        raise AudioError(f"{path}: non-finite samples")
    if recording_id is None:
        recording_id = os.path.splitext(os.path.basename(path))[0]
    clip = AudioClip(np.clip(x, -1.0, 1.0), int(rate), recording_id, participant_id)
    if target_rate is not None and clip.sample_rate != target_rate:
        clip = resample(clip, target_rate)
    return clip


def write_wav(path, clip: AudioClip, subtype: str = "pcm16") -> None:
    """Write a clip as 16-bit PCM (default) or 32-bit float WAV."""
    x = np.clip(np.asarray(clip.samples, dtype=np.float64), -1.0, 1.0)
    if subtype == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    elif subtype == "float32":
        data = x.astype("<f4")
    else:
        raise ValueError(f"unknown WAV subtype {subtype!r}")
    wavfile.write(os.fspath(path), int(clip.sample_rate), data)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling; output length is round(n * target / source)."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    n_in = len(clip.samples)
    n_out = int(round(n_in * target_rate / clip.sample_rate))
    src_pos = np.arange(n_out) * (clip.sample_rate / target_rate)
    y = np.interp(src_pos, np.arange(n_in), clip.samples)
    return AudioClip(y, int(target_rate), clip.recording_id, clip.participant_id)
