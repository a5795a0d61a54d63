"""Command line entry points: synth | train | predict | evaluate.

Run settings come from an INI file (a ``[run]`` section, or bare ``key = value``
lines) with command-line overrides. Everything is validated before any audio
is read, and outputs are only written once the computation has succeeded.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .audio_io import AudioError, load_wav
from .corpus import NOISE_KINDS, DataError, SynthSpec, generate_synthetic, parse_annotations, read_manifest
from .detect import (EvalResult, canonicalize_annotations, lopo_evaluate, train_test_evaluate, evaluate_detector,
                     write_metrics_csv, write_summary_json)
from .nn import PRESETS, TrainConfig
from .pipeline import VARIANTS, Detector, ModelSpec, required_embedding_keys, training_windows
from .preprocess import SILENCE_DB, write_window_manifest

log = logging.getLogger("crydetect")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MODES = ("lopo", "train_test", "cross_domain", "model")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    variant: str = "dsf_af"
    preset: str = "desk"
    seed: int = 0
    jobs: int = 1
    mode: str = "lopo"
    manifest: str = ""
    train_manifest: str = ""
    test_manifest: str = ""
    model_dir: str = ""
    out_dir: str = ""
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    svm_c: float = 1.0
    svm_gamma: float | None = None
    svm_tol: float = 1e-3
    silence_db: float = SILENCE_DB
    embeddings: str = ""
    figures: bool = True

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _convert(key, known[key].default, raw)
        return cls(**kwargs)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.beta1, self.beta2, self.epsilon, self.epochs, self.batch_size,
                           self.seed)

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.variant, self.preset, self.train_config(), self.svm_c, self.svm_gamma, self.svm_tol,
                         self.silence_db, self.embeddings or None)

    def validate(self, verb: str) -> None:
        """Raise ConfigError on anything that can be checked without reading audio."""
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {self.preset!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.svm_c <= 0 or self.svm_tol <= 0 or (self.svm_gamma is not None and self.svm_gamma <= 0):
            raise ConfigError("svm_c, svm_tol and svm_gamma must be positive")
        try:
            self.model_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.variant == "embed_svm":
            _need_file(self.embeddings, "embeddings")
        if verb == "train":
            _need_file(self.manifest, "manifest")
            if not self.model_dir:
                raise ConfigError("train needs model_dir")
        elif verb == "evaluate":
            if self.mode not in MODES:
                raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
            if self.mode == "lopo":
                _need_file(self.manifest, "manifest")
            elif self.mode == "model":
                _need_file(os.path.join(self.model_dir, "detector.json") if self.model_dir else "", "model_dir")
                _need_file(self.test_manifest or self.manifest, "test_manifest")
            else:
                _need_file(self.train_manifest, "train_manifest")
                _need_file(self.test_manifest, "test_manifest")
            if not self.out_dir:
                raise ConfigError("evaluate needs out_dir")


def _convert(key, default, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key == "svm_gamma":
            return None if raw.lower() in ("", "auto", "none") else float(raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _need_file(path, what):
    if not path:
        raise ConfigError(f"missing required setting {what}")
    if not os.path.isfile(path):
        raise ConfigError(f"{what}: no such file {path}")


def read_config_file(path) -> dict:
    """Key/value pairs from an INI ``[run]`` section or a section-less key = value file."""
    try:
        text = open(path).read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if not any(line.strip().startswith("[") for line in text.splitlines()):
            text = "[run]\n" + text
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section("run"):
        raise ConfigError(f"{path}: no [run] section")
    base = os.path.dirname(os.path.abspath(path))
    values = dict(parser.items("run"))
    # paths in a config file are relative to the file itself
    for key in ("manifest", "train_manifest", "test_manifest", "model_dir", "out_dir", "embeddings"):
        if values.get(key) and not os.path.isabs(values[key]):
            values[key] = os.path.join(base, values[key])
    return values


def build_config(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v
    for key in ("variant", "preset", "seed", "jobs", "mode", "manifest", "train_manifest", "test_manifest",
                "model_dir", "out_dir", "epochs", "embeddings"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    return RunConfig.from_mapping(values)


# -- verbs --------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        noise = tuple(s.strip() for s in args.noise.split(",") if s.strip())
        spec = SynthSpec(participants=args.participants, recordings_per_participant=args.recordings,
                         duration_s=args.duration, f0_range=(args.f0_min, args.f0_max), noise_palette=noise,
                         noise_db=args.noise_db, cry_dbfs=args.cry_dbfs, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    manifest = generate_synthetic(spec, args.out)
    print(f"wrote {len(manifest)} recordings for {len(manifest.participants())} participants to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    cfg.validate("train")
    entries = list(read_manifest(cfg.manifest))
    spec = cfg.model_spec()
    if args.embedding_keys:
        keys = required_embedding_keys(entries, cfg.silence_db)
        with open(args.embedding_keys, "w") as f:
            f.write("window_key\n" + "".join(k + "\n" for k in keys))
        print(f"wrote {len(keys)} window keys to {args.embedding_keys}")
        return EXIT_OK
    detector = spec.fit(entries, cfg.seed)
    windows, _ = training_windows(entries, cfg.seed)
    written = detector.save(cfg.model_dir)
    write_window_manifest(os.path.join(cfg.model_dir, "training_windows.csv"), windows)
    print(f"trained {cfg.variant} on {len(windows)} windows; wrote {', '.join(written)} to {cfg.model_dir}")
    return EXIT_OK


def cmd_predict(args) -> int:
    if not os.path.isfile(os.path.join(args.model, "detector.json")):
        raise ConfigError(f"{args.model} does not contain a trained detector")
    if not os.path.isfile(args.wav):
        raise ConfigError(f"no such audio file {args.wav}")
    if args.annotations and not os.path.isfile(args.annotations):
        raise ConfigError(f"no such annotation file {args.annotations}")
    detector = Detector.load(args.model)
    clip = load_wav(args.wav)
    analysis = detector.analyse(clip)
    truth = None
    if args.annotations:
        truth = canonicalize_annotations(parse_annotations(args.annotations), clip.duration).seconds()
    out = args.out or os.path.splitext(os.path.basename(args.wav))[0] + "_timeline.csv"
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["second", "active", "window_crying", "crying"])
        for s in range(len(analysis["crying"])):
            w.writerow([s, int(analysis["active"][s]), int(analysis["binned"][s]), int(analysis["crying"][s])])
    if not args.no_figure:
        from .report import plot_timeline
        plot_timeline(analysis, os.path.splitext(out)[0] + ".png", truth, title=clip.recording_id)
    print(f"{int(analysis['crying'].sum())} crying seconds of {len(analysis['crying'])}; wrote {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = build_config(args)
    cfg.validate("evaluate")
    spec = cfg.model_spec()
    runs: dict[str, EvalResult] = {}
    if cfg.mode == "lopo":
        runs["lopo"] = lopo_evaluate(list(read_manifest(cfg.manifest)), spec, cfg.seed, cfg.jobs)
    elif cfg.mode == "train_test":
        train = list(read_manifest(cfg.train_manifest))
        runs["train_test"] = train_test_evaluate(train, list(read_manifest(cfg.test_manifest)), spec, cfg.seed)
    elif cfg.mode == "model":
        detector = Detector.load(cfg.model_dir)
        entries = list(read_manifest(cfg.test_manifest or cfg.manifest))
        runs["model"] = EvalResult(evaluate_detector(detector, entries), label="model")
    else:
        train = list(read_manifest(cfg.train_manifest))
        test = list(read_manifest(cfg.test_manifest))
        runs["mismatched"] = train_test_evaluate(train, test, spec, cfg.seed)
        runs["matched"] = lopo_evaluate(test, spec, cfg.seed, cfg.jobs)

    os.makedirs(cfg.out_dir, exist_ok=True)
    summaries = {}
    for label, res in runs.items():
        name = "metrics.csv" if len(runs) == 1 else f"metrics_{label}.csv"
        write_metrics_csv(os.path.join(cfg.out_dir, name), res)
        summaries[label] = res.summary()
    if cfg.mode == "cross_domain":
        summaries["f1_drop"] = summaries["matched"]["f1"]["mean"] - summaries["mismatched"]["f1"]["mean"]
    summaries["config"] = {"variant": cfg.variant, "preset": cfg.preset, "seed": cfg.seed, "mode": cfg.mode,
                           "epochs": cfg.epochs}
    write_summary_json(os.path.join(cfg.out_dir, "summary.json"), summaries)
    if cfg.figures:
        from .report import plot_metrics
        plot_metrics(runs, os.path.join(cfg.out_dir, "metrics.png"), title=f"{cfg.variant} ({cfg.mode})")
    for label, res in runs.items():
        s = res.summary()
        print(f"{label}: F1 {s['f1']['mean']:.4f} ± {s['f1']['std']:.4f}  "
              f"P {s['precision']['mean']:.4f}  R {s['recall']['mean']:.4f}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def _run_options(p):
    p.add_argument("--config", help="INI file with a [run] section")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--manifest")
    p.add_argument("--embeddings")
    p.add_argument("--epochs", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crydetect", description="Infant cry detection from long audio recordings.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--participants", type=int, default=4)
    p.add_argument("--recordings", type=int, default=1, help="recordings per participant")
    p.add_argument("--duration", type=int, default=600, help="seconds per recording")
    p.add_argument("--f0-min", type=float, default=440.0)
    p.add_argument("--f0-max", type=float, default=505.0)
    p.add_argument("--noise", default=",".join(NOISE_KINDS), help="comma list from " + ",".join(NOISE_KINDS))
    p.add_argument("--noise-db", type=float, default=-10.0, help="noise level relative to the cry level")
    p.add_argument("--cry-dbfs", type=float, default=-15.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a detector on a manifest")
    _run_options(p)
    p.add_argument("--model-dir", dest="model_dir")
    p.add_argument("--embedding-keys", metavar="PATH",
                   help="only list the window keys an embeddings file must cover, then exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-second crying timeline for one WAV file")
    p.add_argument("--model", required=True, help="directory written by train")
    p.add_argument("--out", help="timeline CSV (default <wav>_timeline.csv)")
    p.add_argument("--annotations", help="optional ground truth drawn in the figure")
    p.add_argument("--no-figure", action="store_true")
    p.add_argument("wav")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="LOPO, train/test, cross-domain or saved-model scoring")
    _run_options(p)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--train-manifest", dest="train_manifest")
    p.add_argument("--test-manifest", dest="test_manifest")
    p.add_argument("--model-dir", dest="model_dir")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, AudioError, KeyError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
