"""Synthetic corpus: determinism, rendering arithmetic, noise, desync,
curriculum, augmentation, persistence."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avsr.audio import stft_magnitudes
from avsr.corpus import (
    AugmentConfig,
    BABBLE_POOL_MIN,
    CorpusSpec,
    CurriculumPolicy,
    FRAMES_PER_CHAR,
    SAMPLES_PER_CHAR,
    augment_visual,
    desync,
    flip_horizontal,
    generate,
    load_corpus,
    make_babble,
    mix_babble,
    render_audio,
    save_corpus,
    spatial_shift,
    word_excerpts,
    utterance_features,
)
from avsr.errors import ConfigError, DataError
from avsr.video import VideoClip


def small_spec(**kw):
    base = dict(alphabet="abcd", n_utterances=6, lexicon_size=4, words_min=1, words_max=3,
                word_len_min=2, word_len_max=3, d_vis=8)
    base.update(kw)
    return CorpusSpec(**base)


def test_single_character_renders_three_frames_and_1920_samples():
    spec = small_spec()
    utts = generate(CorpusSpec(alphabet="a", n_utterances=1, lexicon_size=1, words_min=1,
                               words_max=1, word_len_min=1, word_len_max=1, d_vis=8), seed=0)
    u = utts[0]
    assert u.transcript == "a"
    assert len(u.waveform.samples) == SAMPLES_PER_CHAR
    assert u.n_frames == FRAMES_PER_CHAR
    # 200 Hz tone for the first symbol
    spec_frames = stft_magnitudes(u.waveform).frames
    assert (spec_frames.argmax(axis=1) == 8).all()  # 200 Hz / 25 Hz per bin


def test_generation_is_bit_identical_for_same_spec_and_seed():
    a = generate(small_spec(), seed=42)
    b = generate(small_spec(), seed=42)
    assert [u.transcript for u in a] == [u.transcript for u in b]
    for ua, ub in zip(a, b):
        np.testing.assert_array_equal(ua.waveform.samples, ub.waveform.samples)
        np.testing.assert_array_equal(ua.video, ub.video)
    c = generate(small_spec(), seed=43)
    assert any(u.transcript != v.transcript for u, v in zip(a, c))


def test_distinct_characters_are_two_spectral_bins_apart():
    spec = small_spec()
    tones = [spec.tone(c) for c in spec.alphabet]
    gaps = np.diff(sorted(tones))
    assert (gaps >= 50).all()  # bin spacing is 25 Hz -> at least 2 bins


def test_tone_overrides_and_nyquist_guard():
    spec = small_spec(tone_overrides={"a": 390.0, "b": 390.0})
    assert spec.tone("a") == spec.tone("b") == 390.0
    with pytest.raises(ConfigError, match="Hz"):
        small_spec(tone_overrides={"a": 9000.0})


def test_grouped_audio_rows_align_with_video_frames():
    for u in generate(small_spec(), seed=1):
        feats = utterance_features(u)
        assert feats["audio"].shape[0] == u.n_frames == FRAMES_PER_CHAR * len(u.transcript)


def test_transcripts_respect_the_hundred_character_cap():
    utts = generate(small_spec(n_utterances=10), seed=3)
    assert all(len(u.transcript) <= 100 for u in utts)


# -- babble ------------------------------------------------------------------


@pytest.fixture
def pool():
    return [u.waveform for u in generate(small_spec(n_utterances=BABBLE_POOL_MIN + 2), seed=9)]


def test_babble_has_unit_power(pool, rng):
    babble = make_babble(pool, 4000, rng)
    assert abs(np.mean(babble**2) - 1.0) < 1e-9


def test_small_pool_rejected(pool, rng):
    with pytest.raises(DataError, match="pool"):
        make_babble(pool[:10], 1000, rng)


def test_zero_db_makes_noise_power_equal_signal_power(pool, rng):
    u = generate(small_spec(audio_amplitude=0.05), seed=5)[0]
    mixed = mix_babble(u, 0.0, pool, rng)
    noise = mixed.waveform.samples - u.waveform.samples
    p_signal = np.mean(u.waveform.samples**2)
    p_noise = np.mean(noise**2)
    assert abs(p_noise / p_signal - 1.0) < 1e-6


@pytest.mark.parametrize("snr_db", [-5.0, 0.0, 10.0])
def test_measured_snr_tracks_target_within_hundredth_db(pool, snr_db):
    rng = np.random.default_rng(17)
    for seed in range(3):
        u = generate(small_spec(audio_amplitude=0.02), seed=seed)[0]
        mixed = mix_babble(u, snr_db, pool, rng)
        noise = mixed.waveform.samples - u.waveform.samples
        measured = 10 * np.log10(np.mean(u.waveform.samples**2) / np.mean(noise**2))
        assert abs(measured - snr_db) < 0.01


def test_infinite_snr_sentinel_is_identity(pool, rng):
    u = generate(small_spec(), seed=5)[0]
    assert mix_babble(u, np.inf, pool, rng) is u


def test_silent_signal_has_undefined_snr(pool, rng):
    from dataclasses import replace
    from avsr.audio import Waveform

    u = generate(small_spec(), seed=5)[0]
    silent = replace(u, waveform=Waveform(samples=np.zeros(2000)))
    with pytest.raises(DataError, match="silent"):
        mix_babble(silent, 0.0, pool, rng)


def test_mixture_stays_within_unit_range(pool, rng):
    u = generate(small_spec(audio_amplitude=0.9), seed=5)[0]
    mixed = mix_babble(u, -10.0, pool, rng)
    assert np.max(np.abs(mixed.waveform.samples)) <= 1.0


# -- desync --------------------------------------------------------------------


def test_desync_zero_is_identity():
    u = generate(small_spec(), seed=7)[0]
    shifted = desync(u, 0)
    np.testing.assert_array_equal(shifted.video, u.video)


def test_desync_round_trip_restores_interior_frames():
    u = generate(small_spec(), seed=7)[0]
    k = 2
    back = desync(desync(u, k), -k)
    t = u.n_frames
    np.testing.assert_array_equal(back.video[k : t - k], u.video[k : t - k])


def test_desync_preserves_audio_and_transcript_bit_exactly():
    u = generate(small_spec(), seed=7)[0]
    shifted = desync(u, 3)
    assert shifted.transcript == u.transcript
    assert shifted.waveform is u.waveform


def test_desync_shift_bounds():
    u = generate(small_spec(), seed=7)[0]
    with pytest.raises(DataError, match="shift"):
        desync(u, u.n_frames)


def test_desync_edge_replication():
    u = generate(small_spec(), seed=8)[0]
    shifted = desync(u, 2)
    np.testing.assert_array_equal(shifted.video[0], u.video[0])
    np.testing.assert_array_equal(shifted.video[1], u.video[0])
    np.testing.assert_array_equal(shifted.video[2], u.video[0])
    np.testing.assert_array_equal(shifted.video[3], u.video[1])


# -- curriculum ------------------------------------------------------------------


def test_stage_zero_cuts_single_word_excerpts():
    u = generate(small_spec(), seed=11)[2]
    words = u.transcript.split(" ")
    excerpts = word_excerpts(u)
    assert [e.transcript for e in excerpts] == words
    for e in excerpts:
        assert len(e.waveform.samples) == SAMPLES_PER_CHAR * len(e.transcript)
        assert e.n_frames == FRAMES_PER_CHAR * len(e.transcript)


def test_excerpts_carry_the_exact_rendered_segments():
    u = generate(small_spec(), seed=11)[2]
    first = word_excerpts(u)[0]
    n = len(first.transcript)
    np.testing.assert_array_equal(first.waveform.samples, u.waveform.samples[: n * SAMPLES_PER_CHAR])
    np.testing.assert_array_equal(first.video, u.video[: n * FRAMES_PER_CHAR])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=15)
def test_excerpts_concatenate_back_to_the_word_multiset(seed):
    for u in generate(small_spec(n_utterances=2), seed=seed):
        words = sorted(w for w in u.transcript.split(" ") if w)
        assert sorted(e.transcript for e in word_excerpts(u)) == words


def test_curriculum_pools_filter_by_cap():
    utts = generate(small_spec(n_utterances=12), seed=13)
    policy = CurriculumPolicy(("word", 6, "full"))
    stage0 = policy.pool(0, utts)
    assert all(" " not in u.transcript for u in stage0)
    stage1 = policy.pool(1, utts)
    assert all(len(u.transcript) <= 6 for u in stage1)
    assert policy.pool(2, utts) == utts
    assert policy.pad_cap(1, stage1) == 6


def test_curriculum_caps_must_not_decrease():
    with pytest.raises(ConfigError, match="non-decreasing"):
        CurriculumPolicy(("word", 16, 8))


def test_padded_batch_shapes_hit_the_stage_cap_exactly():
    from avsr.train import assemble_item
    from avsr.vocab import CharVocab

    utts = generate(small_spec(n_utterances=6), seed=13)
    policy = CurriculumPolicy(("word", 8, "full"))
    pool = policy.pool(1, utts)
    cap = policy.pad_cap(1, pool)
    vocab = CharVocab("seq2seq")
    for u in pool:
        item = assemble_item(u, vocab, "seq2seq", ("video", "audio"), cap)
        assert item.feats["video"].shape[0] == cap * FRAMES_PER_CHAR
        assert item.feats["audio"].shape[0] == cap * FRAMES_PER_CHAR
        assert len(item.target_in) == cap + 1 == len(item.target_out)


# -- augmentation ----------------------------------------------------------------


def test_zero_probability_augmentation_is_identity(rng):
    clip = VideoClip(frames=rng.uniform(0, 1, (4, 12, 12, 1)))
    cfg = AugmentConfig(flip_p=0.0, frame_drop_p=0.0, max_spatial_shift=0, max_temporal_shift=0)
    out = augment_visual(clip, rng, cfg)
    np.testing.assert_array_equal(out.frames, clip.frames)


def test_double_flip_is_identity(rng):
    frames = rng.uniform(0, 1, (3, 8, 10, 1))
    np.testing.assert_array_equal(flip_horizontal(flip_horizontal(frames)), frames)


def test_spatial_shift_replicates_edges(rng):
    frames = rng.uniform(0, 1, (1, 4, 4, 1))
    out = spatial_shift(frames, 0, 2)
    np.testing.assert_array_equal(out[0, :, 0], frames[0, :, 0])
    np.testing.assert_array_equal(out[0, :, 1], frames[0, :, 0])
    np.testing.assert_array_equal(out[0, :, 2], frames[0, :, 0])
    np.testing.assert_array_equal(out[0, :, 3], frames[0, :, 1])


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
@settings(max_examples=30)
def test_frame_removal_always_keeps_at_least_one_frame(seed, t):
    rng = np.random.default_rng(seed)
    clip = VideoClip(frames=rng.uniform(0, 1, (t, 8, 8, 1)))
    cfg = AugmentConfig(flip_p=0.0, frame_drop_p=0.95, max_spatial_shift=0, max_temporal_shift=0)
    out = augment_visual(clip, rng, cfg)
    assert out.frames.shape[0] >= 1


def test_feature_mode_augmentation_skips_pixel_transforms(rng):
    feats = rng.normal(size=(5, 8))
    cfg = AugmentConfig(flip_p=1.0, frame_drop_p=0.0, max_spatial_shift=5, max_temporal_shift=0)
    out = augment_visual(feats, rng, cfg)
    np.testing.assert_array_equal(out, feats)


# -- persistence -------------------------------------------------------------------


def test_corpus_round_trip_is_bit_exact(tmp_path):
    utts = generate(small_spec(), seed=21)
    splits = {u.uid: ("test" if i % 3 == 0 else "train") for i, u in enumerate(utts)}
    save_corpus(tmp_path, utts, splits)
    back, back_splits = load_corpus(tmp_path)
    assert back_splits == splits
    assert [u.uid for u in back] == [u.uid for u in utts]
    for a, b in zip(utts, back):
        assert a.transcript == b.transcript and a.seed == b.seed
        np.testing.assert_array_equal(a.waveform.samples, b.waveform.samples)
        np.testing.assert_array_equal(a.video, b.video)


def test_pixel_corpus_round_trip(tmp_path):
    spec = small_spec(video_mode="pixels", image_size=32, n_utterances=2)
    utts = generate(spec, seed=22)
    assert isinstance(utts[0].video, VideoClip)
    save_corpus(tmp_path, utts, {u.uid: "train" for u in utts})
    back, _ = load_corpus(tmp_path)
    np.testing.assert_array_equal(back[0].video.frames, utts[0].video.frames)


def test_missing_manifest_is_a_data_error(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        load_corpus(tmp_path)
