"""Manifests, annotation files and the synthetic cry corpus generator."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .audio_io import SAMPLE_RATE, AudioClip, load_wav, write_wav
from .detect import LabelTrack, canonicalize_annotations
from .preprocess import CRYING

MANIFEST_COLUMNS = ["participant_id", "recording_id", "wav_path", "annotation_path", "split"]
NOISE_KINDS = ("babble", "broadband", "silence")


class DataError(ValueError):
    """Malformed or missing corpus data."""


def parse_annotations(path) -> list[tuple[float, float]]:
    """Read ``start_s,end_s,label`` lines; only ``crying`` labels are allowed."""
    out = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row or not "".join(row).strip() or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "start_s":
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected start_s,end_s,label")
            try:
                a, b = float(row[0]), float(row[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric time") from None
            label = row[2].strip()
            if label != CRYING:
                raise DataError(f"{path}:{lineno}: label must be 'crying', got {label!r}")
            if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
                raise DataError(f"{path}:{lineno}: end {b} must exceed start {a}")
            out.append((a, b))
    return out


def write_annotations(path, intervals) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["start_s", "end_s", "label"])
        for a, b in intervals:
            w.writerow([f"{a:g}", f"{b:g}", CRYING])


@dataclass(frozen=True)
class ManifestEntry:
    participant_id: str
    recording_id: str
    wav_path: str
    annotation_path: str = ""
    split: str = ""

    def load_clip(self) -> AudioClip:
        return load_wav(self.wav_path, self.recording_id, self.participant_id)

    def duration(self) -> float:
        rate, data = wavfile.read(self.wav_path, mmap=True)
        return len(data) / rate

    def load_track(self, duration: float | None = None) -> LabelTrack:
        duration = self.duration() if duration is None else duration
        raw = parse_annotations(self.annotation_path) if self.annotation_path else []
        return canonicalize_annotations(raw, duration)

    def truth_seconds(self) -> np.ndarray:
        return self.load_track().seconds()


@dataclass
class Manifest:
    entries: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def participants(self) -> list[str]:
        return sorted({e.participant_id for e in self.entries})

    def select(self, participants=None, split=None) -> "Manifest":
        keep = [e for e in self.entries
                if (participants is None or e.participant_id in participants) and (split is None or e.split == split)]
        return Manifest(keep)


def read_manifest(path) -> Manifest:
    """Read a manifest CSV; relative paths resolve against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(MANIFEST_COLUMNS[:3]) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            def resolve(p):
                p = (p or "").strip()
                return p if not p or os.path.isabs(p) else os.path.join(base, p)
            entries.append(ManifestEntry(row["participant_id"], row["recording_id"], resolve(row["wav_path"]),
                                         resolve(row.get("annotation_path")), (row.get("split") or "").strip()))
    ids = [e.recording_id for e in entries]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise DataError(f"{path}: duplicate recording ids {dupes}")
    return Manifest(entries)


def write_manifest(path, manifest: Manifest, relative_to: str | None = None) -> None:
    base = os.path.dirname(os.path.abspath(path)) if relative_to is None else relative_to
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for e in manifest:
            rel = [os.path.relpath(p, base) if p else "" for p in (e.wav_path, e.annotation_path)]
            w.writerow([e.participant_id, e.recording_id, rel[0], rel[1], e.split])


def validate_manifest(manifest: Manifest, load_audio: bool = True) -> None:
    """Check every path resolves and every annotation file parses against its recording."""
    problems = []
    for e in manifest:
        if not os.path.isfile(e.wav_path):
            problems.append(f"{e.recording_id}: missing audio {e.wav_path}")
            continue
        if e.annotation_path and not os.path.isfile(e.annotation_path):
            problems.append(f"{e.recording_id}: missing annotations {e.annotation_path}")
            continue
        try:
            duration = e.load_clip().duration if load_audio else e.duration()
            e.load_track(duration)
        except (ValueError, OSError) as exc:
            problems.append(f"{e.recording_id}: {exc}")
    if problems:
        raise DataError("invalid manifest:\n  " + "\n  ".join(problems))


# -- synthetic corpus ---------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic corpus.

    Cry episodes alternate with gaps whose lengths are drawn uniformly from the
    given ranges (whole seconds), so the expected episode rate is
    60 / (mean duration + mean gap) per minute.
    """

    participants: int = 4
    recordings_per_participant: int = 1
    duration_s: int = 600
    cry_duration_s: tuple = (40, 80)
    cry_gap_s: tuple = (100, 200)
    f0_range: tuple = (440.0, 505.0)
    am_range: tuple = (3.0, 5.0)
    noise_palette: tuple = NOISE_KINDS
    noise_segment_s: tuple = (15, 45)
    noise_db: float = -10.0
    cry_dbfs: float = -15.0
    sample_rate: int = SAMPLE_RATE
    seed: int = 0

    def __post_init__(self):
        nyquist = self.sample_rate / 2
        lo, hi = self.f0_range
        if not (0 < lo <= hi < nyquist):
            raise ValueError(f"F0 range {self.f0_range} must lie within (0, {nyquist})")
        if self.cry_duration_s[0] < 3 or self.cry_duration_s[0] > self.cry_duration_s[1]:
            raise ValueError("cry durations must be >= 3 s and ordered")
        if self.cry_gap_s[0] <= 5 or self.cry_gap_s[0] > self.cry_gap_s[1]:
            raise ValueError("gaps between cry episodes must exceed 5 s and be ordered")
        if self.participants < 1 or self.recordings_per_participant < 1 or self.duration_s < 5:
            raise ValueError("need at least one participant, one recording and 5 s of audio")
        bad = set(self.noise_palette) - set(NOISE_KINDS)
        if bad or not self.noise_palette:
            raise ValueError(f"noise palette must be drawn from {NOISE_KINDS}, got {self.noise_palette}")


def _rms(x):
    return float(np.sqrt(np.mean(x * x))) if len(x) else 0.0


def _cry(rng, n, sr, f0_range, am_range):
    t = np.arange(n) / sr
    f0 = rng.uniform(*f0_range)
    # slow pitch drift of a few percent
    drift = 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * drift) / sr
    n_harm = int(min(7000.0, sr / 2 - 500) // (f0 * 1.05))
    wave = sum(np.sin(k * phase) / k for k in range(1, n_harm + 1))
    am = rng.uniform(*am_range)
    env = (0.5 - 0.5 * np.cos(2 * np.pi * am * t + rng.uniform(0, 2 * np.pi))) ** 0.7
    ramp = min(n // 2, int(0.05 * sr))
    fade = np.ones(n)
    fade[:ramp] = np.linspace(0, 1, ramp)
    fade[n - ramp:] = np.linspace(1, 0, ramp)
    x = wave * (0.2 + 0.8 * env) * fade
    return x / (_rms(x) or 1.0)


def _babble(rng, n, sr, talkers=4):
    t = np.arange(n) / sr
    out = np.zeros(n)
    sos = signal.butter(4, [300, 3400], btype="bandpass", fs=sr, output="sos")
    for _ in range(talkers):
        f0 = rng.uniform(100, 220) * (1 + 0.1 * np.sin(2 * np.pi * rng.uniform(0.2, 1.0) * t))
        phase = 2 * np.pi * np.cumsum(f0) / sr
        voice = 2.0 * np.mod(phase / (2 * np.pi), 1.0) - 1.0  # naive sawtooth; the bandpass tames aliasing
        # syllable gating: alternating 0.1-0.4 s voiced / 0.05-0.3 s pauses
        gate = np.zeros(n)
        pos = int(rng.integers(0, int(0.3 * sr)))
        while pos < n:
            on = int(rng.uniform(0.1, 0.4) * sr)
            gate[pos:pos + on] = 1.0
            pos += on + int(rng.uniform(0.05, 0.3) * sr)
        gate = signal.oaconvolve(gate, np.hanning(int(0.02 * sr)) / (0.01 * sr), mode="same")
        out += voice * gate
    out = signal.sosfilt(sos, out)
    return out / (_rms(out) or 1.0)


def _noise_bed(rng, spec: SynthSpec, n):
    sr = spec.sample_rate
    bed = np.zeros(n)
    pos = 0
    while pos < n:
        seg = int(rng.integers(spec.noise_segment_s[0], spec.noise_segment_s[1] + 1)) * sr
        stop = min(n, pos + seg)
        kind = spec.noise_palette[int(rng.integers(len(spec.noise_palette)))]
        if kind == "babble":
            bed[pos:stop] = _babble(rng, stop - pos, sr)
        elif kind == "broadband":
            bed[pos:stop] = rng.standard_normal(stop - pos)
        pos = stop
    return bed


def _episodes(rng, spec: SynthSpec):
    out = []
    t = int(rng.integers(spec.cry_gap_s[0] // 2, spec.cry_gap_s[1] // 2 + 1))
    while True:
        d = int(rng.integers(spec.cry_duration_s[0], spec.cry_duration_s[1] + 1))
        if t + d > spec.duration_s:
            break
        out.append((t, t + d))
        t += d + int(rng.integers(spec.cry_gap_s[0], spec.cry_gap_s[1] + 1))
    return out


def synthesize_recording(spec: SynthSpec, rng) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """One recording's samples and its crying intervals (whole seconds)."""
    sr = spec.sample_rate
    n = spec.duration_s * sr
    level = 10.0 ** (spec.cry_dbfs / 20.0)
    episodes = _episodes(rng, spec)
    x = _noise_bed(rng, spec, n) * level * 10.0 ** (spec.noise_db / 20.0)
    for a, b in episodes:
        x[a * sr:b * sr] += level * _cry(rng, (b - a) * sr, sr, spec.f0_range, spec.am_range)
    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
    return x, episodes


def generate_synthetic(spec: SynthSpec, out_dir) -> Manifest:
    """Write WAVs, annotation CSVs and ``manifest.csv`` under ``out_dir``."""
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(os.path.join(out_dir, "wav"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "annotations"), exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create corpus directory {out_dir}: {exc}") from None
    entries = []
    for p in range(spec.participants):
        pid = f"P{p + 1:02d}"
        for r in range(spec.recordings_per_participant):
            rid = f"{pid}_R{r + 1}"
            rng = np.random.default_rng([spec.seed, p, r])
            x, episodes = synthesize_recording(spec, rng)
            wav = os.path.join(out_dir, "wav", rid + ".wav")
            ann = os.path.join(out_dir, "annotations", rid + ".csv")
            write_wav(wav, AudioClip(x, spec.sample_rate, rid, pid))
            write_annotations(ann, episodes)
            entries.append(ManifestEntry(pid, rid, wav, ann))
    manifest = Manifest(entries)
    write_manifest(os.path.join(out_dir, "manifest.csv"), manifest)
    return manifest


def with_split(manifest: Manifest, split: str) -> Manifest:
    return Manifest([replace(e, split=split) for e in manifest])
