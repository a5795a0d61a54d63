"""Infant cry detection in long audio recordings.

Pipeline: silence filter -> 5 s windows -> acoustic features, log-mel images and
a batch-normalized AlexNet -> RBF SVM -> per-second binning and smoothing.
"""

from .audio_io import SAMPLE_RATE, AudioClip, AudioError, load_wav, write_wav
from .corpus import Manifest, ManifestEntry, SynthSpec, generate_synthetic, read_manifest
from .detect import EvalResult, Score, lopo_evaluate, score, train_test_evaluate
from .pipeline import VARIANTS, Detector, ModelSpec, fit_detector

__version__ = "0.1.0"

__all__ = [
    "SAMPLE_RATE", "AudioClip", "AudioError", "load_wav", "write_wav",
    "Manifest", "ManifestEntry", "SynthSpec", "generate_synthetic", "read_manifest",
    "EvalResult", "Score", "lopo_evaluate", "score", "train_test_evaluate",
    "VARIANTS", "Detector", "ModelSpec", "fit_detector",
]
