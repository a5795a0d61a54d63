import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crydetect.audio_io import AudioClip
from crydetect.preprocess import (CRYING, MIXED, NOT_CRYING, UNLABELED, WindowInstance, balance, band_levels,
                                  drop_mixed, make_windows, silence_filter, smooth_mask, time_mask_augment,
                                  write_window_manifest)

SR = 22050


def tone(freq, seconds, amp):
    return amp * np.sin(2 * np.pi * freq * np.arange(int(seconds * SR)) / SR)


def oracle_silence(x, threshold_db, edge=350.0, seg=980, hop=490):
    """Band level per second from an explicit DFT of every Hann frame."""
    n = np.arange(seg)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * n / seg)
    k = np.arange(seg // 2 + 1)
    band = k * SR / seg >= edge
    basis = np.exp(-2j * np.pi * np.outer(k[band], n) / seg)
    scale = np.where(k[band] == seg // 2, 1.0, 2.0)
    out = []
    for s in range(len(x) // SR):
        sec = x[s * SR:(s + 1) * SR]
        frames = np.array([sec[i:i + seg] * w for i in range(0, SR - seg + 1, hop)])
        p = (np.abs(frames @ basis.T) ** 2 @ scale).mean() / (seg * (w ** 2).sum())
        out.append(p > 0 and 10 * np.log10(p) >= threshold_db)
    return np.array(out)


def test_digital_silence_all_silent():
    assert not silence_filter(AudioClip(np.zeros(3 * SR))).any()


def test_full_scale_1khz_retained():
    mask = silence_filter(AudioClip(tone(1000, 4, 1.0)))
    assert mask.shape == (4,) and mask.all()


def test_low_tone_is_silent_above_band():
    x = tone(100, 3, 10 ** (-3 / 20) * np.sqrt(2))
    assert not oracle_silence(x, -60).any()
    assert not silence_filter(AudioClip(x)).any()


def test_mask_length_is_whole_seconds():
    assert len(silence_filter(AudioClip(np.zeros(int(3.7 * SR))))) == 3
    with pytest.raises(ValueError):
        silence_filter(AudioClip(np.zeros(SR - 1)))


def test_silence_filter_matches_oracle_on_random_clips():
    rng = np.random.default_rng(12)
    agree = 0
    outcomes = set()
    for _ in range(100):
        x = np.zeros(3 * SR)
        for s in range(3):
            level = 10 ** (rng.uniform(-85, -35) / 20)
            kind = rng.integers(3)
            if kind == 0:
                seg = rng.standard_normal(SR) * level
            elif kind == 1:
                seg = tone(rng.uniform(50, 3000), 1, level)
            else:
                seg = tone(rng.uniform(50, 300), 1, 0.5) + rng.standard_normal(SR) * level * 0.1
            x[s * SR:(s + 1) * SR] = seg
        ours = silence_filter(AudioClip(x))
        ref = oracle_silence(x, -60)
        agree += np.array_equal(ours, ref)
        outcomes.update(ours.tolist())
    assert agree == 100
    assert outcomes == {True, False}


def test_band_levels_full_scale_square_near_zero_db():
    x = np.sign(np.sin(2 * np.pi * 1000.5 * np.arange(2 * SR) / SR))
    assert np.all(np.abs(band_levels(AudioClip(x)) - 0) < 1.0)


def pattern(*runs_):
    out = []
    for val, n in runs_:
        out += [val] * n
    return np.array(out, dtype=bool)


def test_smooth_bridges_short_gap():
    m = pattern((True, 3), (False, 2), (True, 3))
    assert smooth_mask(m).all()


def test_smooth_removes_isolated_short_run():
    m = pattern((False, 6), (True, 4), (False, 6))
    assert not smooth_mask(m).any()


def test_smooth_all_active_fixed_point():
    assert smooth_mask(np.ones(20, dtype=bool)).all()


def test_smooth_gap_of_six_not_bridged():
    m = pattern((True, 5), (False, 6), (True, 5))
    np.testing.assert_array_equal(smooth_mask(m), m)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), max_size=120))
def test_smooth_mask_idempotent(bits):
    once = smooth_mask(bits)
    np.testing.assert_array_equal(smooth_mask(once), once)


def clip_of(seconds, rid="rec"):
    return AudioClip(np.random.default_rng(0).uniform(-0.1, 0.1, seconds * SR), SR, rid, "P1")


def test_ten_second_run_six_windows():
    ws = make_windows(clip_of(10), np.ones(10, dtype=bool))
    assert [w.start for w in ws] == list(range(6))
    assert all(w.label == UNLABELED and len(w.samples) == 5 * SR for w in ws)


def test_seven_second_run():
    ws = make_windows(clip_of(7), np.ones(7, dtype=bool))
    assert [w.start for w in ws] == [0, 1, 2]


def test_short_run_gives_no_windows():
    assert make_windows(clip_of(4), np.ones(4, dtype=bool)) == []


@settings(max_examples=56, deadline=None)
@given(st.integers(5, 60))
def test_window_count_is_n_minus_four(n):
    clip = AudioClip(np.zeros(n * SR))
    assert len(make_windows(clip, np.ones(n, dtype=bool))) == n - 4


def test_windows_respect_runs_and_content():
    clip = clip_of(20)
    mask = pattern((True, 6), (False, 8), (True, 6))
    ws = make_windows(clip, mask)
    assert [w.start for w in ws] == [0, 1, 14, 15]
    np.testing.assert_array_equal(ws[2].samples, clip.samples[14 * SR:19 * SR])


def test_window_labels():
    labels = pattern((True, 3), (False, 2), (True, 6), (False, 5))
    ws = make_windows(clip_of(16), None, labels)
    by_start = {w.start: w.label for w in ws}
    assert by_start[0] == MIXED
    assert by_start[5] == CRYING and by_start[6] == CRYING
    assert by_start[11] == NOT_CRYING


def test_drop_mixed():
    mk = lambda lab: WindowInstance(np.zeros(1), 0, lab)
    assert [w.label for w in drop_mixed([mk(CRYING), mk(MIXED), mk(NOT_CRYING)])] == [CRYING, NOT_CRYING]
    assert drop_mixed([mk(MIXED)] * 3) == []
    ws = [mk(CRYING), mk(NOT_CRYING)]
    assert drop_mixed(ws) == ws


def cry_window(start=0, rid="r"):
    x = np.random.default_rng(start).uniform(0.1, 0.5, 5 * SR)
    return WindowInstance(x, start, CRYING, rid)


def test_time_mask_deterministic_and_local():
    w = cry_window()
    a = time_mask_augment(w, 42)
    b = time_mask_augment(w, 42)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert a.augmented
    zeroed = np.flatnonzero(a.samples != w.samples)
    assert 1 <= len(zeroed) <= 9702
    assert zeroed[-1] - zeroed[0] + 1 == len(zeroed)
    assert np.all(a.samples[zeroed] == 0)
    keep = np.ones(len(w.samples), dtype=bool)
    keep[zeroed] = False
    np.testing.assert_array_equal(a.samples[keep], w.samples[keep])


def test_time_mask_lengths_bounded_over_seeds():
    w = cry_window()
    lengths = [np.sum(time_mask_augment(w, s).samples == 0) for s in range(200)]
    assert max(lengths) <= 9702 and min(lengths) >= 1
    assert max(lengths) > 5000


def test_time_mask_requires_crying():
    with pytest.raises(ValueError):
        time_mask_augment(WindowInstance(np.zeros(10), 0, NOT_CRYING), 0)


def make_set(n_cry, n_neg):
    cry = [cry_window(i, "c") for i in range(n_cry)]
    neg = [WindowInstance(np.zeros(8), i, NOT_CRYING, "n") for i in range(n_neg)]
    return cry + neg


def test_balance_subsamples_negatives():
    out = balance(make_set(10, 100), 0)
    assert sum(w.label == CRYING for w in out) == 20
    assert sum(w.augmented for w in out) == 10
    assert sum(w.label == NOT_CRYING for w in out) == 20


def test_balance_keeps_scarce_negatives():
    out = balance(make_set(10, 15), 0)
    assert sum(w.label == CRYING for w in out) == 20
    assert sum(w.label == NOT_CRYING for w in out) == 15


def test_balance_deterministic():
    a = balance(make_set(6, 40), 3)
    b = balance(make_set(6, 40), 3)
    assert [(w.key, w.augmented) for w in a] == [(w.key, w.augmented) for w in b]
    assert all(x.samples.tobytes() == y.samples.tobytes() for x, y in zip(a, b))


def test_balance_needs_both_classes():
    with pytest.raises(ValueError):
        balance(make_set(3, 0), 0)
    with pytest.raises(ValueError):
        balance(make_set(0, 3), 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 60), st.integers(0, 99))
def test_balance_counts_property(n_cry, n_neg, seed):
    out = balance(make_set(n_cry, n_neg), seed)
    cry = sum(w.label == CRYING for w in out)
    neg = sum(w.label == NOT_CRYING for w in out)
    assert cry == 2 * n_cry
    assert neg <= cry and neg == min(n_neg, 2 * n_cry)


def test_window_manifest(tmp_path):
    ws = balance(make_set(2, 5), 0)
    write_window_manifest(tmp_path / "w.csv", ws)
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "recording_id,start_s,label,augmented"
    assert len(lines) == 1 + len(ws)
