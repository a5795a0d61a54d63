import csv
import json
import os

import numpy as np
import pytest

from crydetect.audio_io import AudioClip, write_wav
from crydetect.cli import ConfigError, RunConfig, main, read_config_file
from crydetect.corpus import read_manifest


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "corpus"), "--participants", "3", "--duration", "240",
                 "--seed", "5"]) == 0
    return root


def write_ini(path, **kv):
    path.write_text("[run]\n" + "".join(f"{k} = {v}\n" for k, v in kv.items()))
    return str(path)


def test_synth_layout(corpus):
    m = read_manifest(corpus / "corpus" / "manifest.csv")
    assert m.participants() == ["P01", "P02", "P03"]
    assert all(e.duration() == 240 for e in m)


def test_synth_bad_f0_is_usage_error(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "x"), "--f0-min", "600", "--f0-max", "500"]) == 2
    assert not (tmp_path / "x").exists()


def test_unknown_config_key(tmp_path, corpus):
    ini = write_ini(tmp_path / "r.ini", manifest=corpus / "corpus" / "manifest.csv", colour="blue")
    assert main(["train", "--config", ini]) == 2


def test_config_errors_leave_no_outputs(tmp_path, corpus):
    man = corpus / "corpus" / "manifest.csv"
    ini = write_ini(tmp_path / "r.ini", variant="embed_svm", manifest=man, model_dir=tmp_path / "m")
    assert main(["train", "--config", ini]) == 2
    ini = write_ini(tmp_path / "r.ini", manifest=tmp_path / "missing.csv", out_dir=tmp_path / "e")
    assert main(["evaluate", "--config", ini]) == 2
    assert main(["evaluate", "--manifest", str(man), "--out", str(tmp_path / "e"), "--set", "epochs=0"]) == 2
    assert main(["evaluate", "--manifest", str(man), "--out", str(tmp_path / "e"), "--set", "svm_c=-1"]) == 2
    assert not (tmp_path / "m").exists() and not (tmp_path / "e").exists()


def test_sectionless_config_and_relative_paths(tmp_path):
    p = tmp_path / "flat.cfg"
    p.write_text("variant = af\nmanifest = data/m.csv\nsvm_gamma = auto\nfigures = no\n")
    values = read_config_file(p)
    cfg = RunConfig.from_mapping(values)
    assert cfg.variant == "af" and cfg.svm_gamma is None and cfg.figures is False
    assert cfg.manifest == str(tmp_path / "data" / "m.csv")
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"seed": "zero"})


def test_data_error_exit_code(tmp_path):
    (tmp_path / "m.csv").write_text("participant_id,recording_id,wav_path,annotation_path\n"
                                    "P1,r1,r1.wav,\nP2,r2,r2.wav,\n")
    (tmp_path / "r1.wav").write_bytes(b"RIFF garbage")
    (tmp_path / "r2.wav").write_bytes(b"RIFF garbage")
    rc = main(["evaluate", "--variant", "af", "--manifest", str(tmp_path / "m.csv"), "--out", str(tmp_path / "e")])
    assert rc == 3
    assert not (tmp_path / "e").exists()


@pytest.fixture(scope="module")
def af_model(corpus):
    out = corpus / "af_model"
    assert main(["train", "--variant", "af", "--manifest", str(corpus / "corpus" / "manifest.csv"),
                 "--model-dir", str(out)]) == 0
    return out


def test_af_train_outputs(af_model):
    assert sorted(os.listdir(af_model)) == ["detector.json", "svm.bin", "svm.json", "training_windows.csv"]


def test_train_deterministic(corpus, af_model, tmp_path):
    assert main(["train", "--variant", "af", "--manifest", str(corpus / "corpus" / "manifest.csv"),
                 "--model-dir", str(tmp_path / "again")]) == 0
    for name in os.listdir(af_model):
        assert (af_model / name).read_bytes() == (tmp_path / "again" / name).read_bytes(), name


def test_predict_silence(af_model, tmp_path):
    write_wav(tmp_path / "quiet.wav", AudioClip(np.zeros(int(37.6 * 22050))))
    out = tmp_path / "t.csv"
    assert main(["predict", "--model", str(af_model), "--out", str(out), str(tmp_path / "quiet.wav")]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 37
    assert all(r["crying"] == "0" and r["active"] == "0" for r in rows)
    assert (tmp_path / "t.png").stat().st_size > 0


def test_predict_missing_model(tmp_path):
    assert main(["predict", "--model", str(tmp_path), str(tmp_path / "x.wav")]) == 2


def test_predict_detects_cries(af_model, corpus, tmp_path):
    wav = corpus / "corpus" / "wav" / "P02_R1.wav"
    out = tmp_path / "p.csv"
    assert main(["predict", "--model", str(af_model), "--out", str(out), "--no-figure", str(wav)]) == 0
    crying = [r["crying"] == "1" for r in csv.DictReader(open(out))]
    assert len(crying) == 240 and any(crying)
    assert not (tmp_path / "p.png").exists()


def test_evaluate_saved_model_is_reproducible(af_model, corpus, tmp_path):
    args = ["evaluate", "--mode", "model", "--model-dir", str(af_model), "--manifest",
            str(corpus / "corpus" / "manifest.csv")]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    header = (tmp_path / "a" / "metrics.csv").read_text().splitlines()[0]
    assert header == "participant,TP,FP,FN,TN,P,R,F1"
    assert (tmp_path / "a" / "metrics.png").exists()


def test_lopo_fold_count_and_jobs(corpus, tmp_path):
    man = str(corpus / "corpus" / "manifest.csv")
    assert main(["evaluate", "--variant", "af", "--manifest", man, "--out", str(tmp_path / "s")]) == 0
    assert main(["evaluate", "--variant", "af", "--manifest", man, "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    summary = json.loads((tmp_path / "s" / "summary.json").read_text())
    assert summary["lopo"]["participants"] == 3
    assert (tmp_path / "s" / "metrics.csv").read_bytes() == (tmp_path / "p" / "metrics.csv").read_bytes()


def test_cross_domain_emits_both(corpus, tmp_path):
    man = str(corpus / "corpus" / "manifest.csv")
    rc = main(["evaluate", "--variant", "af", "--mode", "cross_domain", "--train-manifest", man,
               "--test-manifest", man, "--out", str(tmp_path / "x")])
    assert rc == 0
    names = sorted(os.listdir(tmp_path / "x"))
    assert names == ["metrics.png", "metrics_matched.csv", "metrics_mismatched.csv", "summary.json"]
    summary = json.loads((tmp_path / "x" / "summary.json").read_text())
    assert {"matched", "mismatched", "f1_drop"} <= set(summary)


def test_embed_svm_round_trip(corpus, tmp_path):
    man = corpus / "corpus" / "manifest.csv"
    keys_path = tmp_path / "keys.csv"
    assert main(["train", "--variant", "af", "--manifest", str(man), "--model-dir", str(tmp_path / "unused"),
                 "--embedding-keys", str(keys_path)]) == 0
    keys = keys_path.read_text().split()[1:]
    assert any(k.endswith(":masked") for k in keys)
    # stand-in embeddings: the crying fraction of the window plus deterministic noise
    truth = {e.recording_id: e.truth_seconds() for e in read_manifest(man)}
    rng = np.random.default_rng(0)
    with open(tmp_path / "emb.csv", "w") as f:
        f.write("window_key," + ",".join(f"e{i}" for i in range(128)) + "\n")
        for k in keys:
            rid, start = k.split(":")[:2]
            frac = truth[rid][int(start):int(start) + 5].mean()
            vec = np.concatenate([[frac * 4], rng.standard_normal(127) * 0.1])
            f.write(k + "," + ",".join(f"{v:.6f}" for v in vec) + "\n")
    ini = write_ini(tmp_path / "r.ini", variant="embed_svm", manifest=man, embeddings=tmp_path / "emb.csv",
                    out_dir=tmp_path / "ev")
    assert main(["evaluate", "--config", ini]) == 0
    summary = json.loads((tmp_path / "ev" / "summary.json").read_text())
    assert summary["lopo"]["f1"]["mean"] > 0.9


def test_embed_svm_missing_keys_is_data_error(corpus, tmp_path):
    (tmp_path / "emb.csv").write_text("window_key," + ",".join(f"e{i}" for i in range(128)) + "\n")
    rc = main(["evaluate", "--variant", "embed_svm", "--embeddings", str(tmp_path / "emb.csv"),
               "--manifest", str(corpus / "corpus" / "manifest.csv"), "--out", str(tmp_path / "ev")])
    assert rc == 3
