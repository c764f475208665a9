"""Architecture-level behavior: modality paths, masking, init, overfit runs."""

import math

import numpy as np
import pytest

from avsr.errors import ConfigError, DataError, VocabularyError
from avsr.losses import build_ctc_loss, build_smoothed_cross_entropy
from avsr.models import CtcModel, Seq2SeqModel
from avsr.optim import AdamState, adam_step
from avsr.tensor import Graph, grad_check
from avsr.transformer import ModelConfig


def tiny_cfg(**kw):
    base = dict(d_model=8, heads=2, ff_hidden=16, enc_layers=1, dec_layers=1, ctc_layers=1, dropout=0.0, d_vis=6, d_audio=10)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def feats(rng):
    return {"video": rng.normal(size=(5, 6)), "audio": rng.normal(size=(5, 10))}


def test_video_only_encode_leaves_audio_flag_off(feats):
    model = Seq2SeqModel(tiny_cfg())
    enc = model.encode_arrays({"video": feats["video"]})
    assert enc.available == ("video",)
    assert enc.audio is None


def test_both_modalities_absent_rejected():
    model = Seq2SeqModel(tiny_cfg())
    with pytest.raises(DataError, match="absent"):
        model.encode_arrays({})


def test_model_without_audio_encoder_rejects_audio_features(feats):
    model = Seq2SeqModel(tiny_cfg(), modalities=("video",))
    with pytest.raises(ConfigError, match="no encoder"):
        model.encode_arrays(feats)


def test_untrained_decoder_is_near_uniform(feats):
    model = Seq2SeqModel(tiny_cfg(d_model=16))
    g = Graph()
    lp = model.teacher_log_probs(g, feats, np.array([model.vocab.sos_id, 0, 1]))
    ppl = math.exp(-lp.value.mean())  # per-step perplexity under a uniform target
    assert ppl > 0.9 * model.vocab.size
    np.testing.assert_allclose(np.exp(lp.value).sum(axis=1), np.ones(3), atol=1e-9)


def test_av_model_with_audio_absent_is_bit_identical_to_video_only_model(feats):
    av = Seq2SeqModel(tiny_cfg(), rng=np.random.default_rng(3))
    v_only = Seq2SeqModel(tiny_cfg(), modalities=("video",), rng=np.random.default_rng(99))
    for name in v_only.params.arrays:
        v_only.params.arrays[name] = av.params.arrays[name].copy()
    tin = np.array([av.vocab.sos_id, 4, 2, 9])
    g1, g2 = Graph(), Graph()
    out_av = av.teacher_log_probs(g1, {"video": feats["video"]}, tin).value
    out_v = v_only.teacher_log_probs(g2, {"video": feats["video"]}, tin).value
    np.testing.assert_array_equal(out_av, out_v)


def test_ctc_av_with_audio_absent_matches_video_only_model(feats):
    av = CtcModel(tiny_cfg(), rng=np.random.default_rng(4))
    v_only = CtcModel(tiny_cfg(), modalities=("video",), rng=np.random.default_rng(5))
    for name in v_only.params.arrays:
        v_only.params.arrays[name] = av.params.arrays[name].copy()
    out_av = av.log_posteriors({"video": feats["video"]})
    out_v = v_only.log_posteriors({"video": feats["video"]})
    np.testing.assert_array_equal(out_av, out_v)


def test_causal_mask_blocks_future_target_positions(feats):
    model = Seq2SeqModel(tiny_cfg(), rng=np.random.default_rng(6))
    base = np.array([model.vocab.sos_id, 1, 2, 3, 4])
    changed = base.copy()
    changed[3] = 7  # decoder input position 3
    g1, g2 = Graph(), Graph()
    out1 = model.teacher_log_probs(g1, feats, base).value
    out2 = model.teacher_log_probs(g2, feats, changed).value
    np.testing.assert_array_equal(out1[:3], out2[:3])
    assert not np.allclose(out1[3:], out2[3:])


def test_decoder_rejects_out_of_vocabulary_ids(feats):
    model = Seq2SeqModel(tiny_cfg())
    with pytest.raises(VocabularyError):
        g = Graph()
        model.teacher_log_probs(g, feats, np.array([model.vocab.sos_id, 99]))


def test_ctc_posterior_rows_normalize(feats):
    model = CtcModel(tiny_cfg())
    lp = model.log_posteriors(feats)
    assert lp.shape == (5, model.vocab.size + 1)
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), np.ones(5), atol=1e-9)


def test_ctc_single_frame(rng):
    model = CtcModel(tiny_cfg())
    lp = model.log_posteriors({"video": rng.normal(size=(1, 6)), "audio": rng.normal(size=(1, 10))})
    assert lp.shape == (1, 41)


def test_ctc_frame_count_mismatch_rejected(rng):
    model = CtcModel(tiny_cfg())
    with pytest.raises(DataError, match="frame counts differ"):
        model.log_posteriors({"video": rng.normal(size=(4, 6)), "audio": rng.normal(size=(5, 10))})


def test_seq2seq_gradients_pass_finite_differences(feats):
    model = Seq2SeqModel(tiny_cfg(), rng=np.random.default_rng(8))
    g = Graph()
    lp = model.teacher_log_probs(g, feats, np.array([model.vocab.sos_id, 0, 1]))
    loss = build_smoothed_cross_entropy(g, lp, np.array([0, 1, model.vocab.eos_id]), 0.1, pad_id=model.vocab.pad_id)
    for name in ("s2s.dec.l0.fuse.w.audio", "s2s.enc.video.l0.att.h0.wq", "s2s.out.w", "s2s.dec.embed"):
        assert grad_check(g, loss, name=name, h=1e-6) < 1e-4


def test_ctc_model_gradients_pass_finite_differences(feats):
    model = CtcModel(tiny_cfg(), rng=np.random.default_rng(9))
    g = Graph()
    lp = model.log_posteriors_node(g, feats)
    loss = build_ctc_loss(g, lp, [0, 1], model.vocab.blank_id)
    for name in ("ctc.fuse.w.video", "ctc.stack.l0.ff.w1", "ctc.out.w"):
        assert grad_check(g, loss, name=name, h=1e-6) < 1e-4


def _adam_fit(model, build_loss, steps, lr=3e-3):
    adam = AdamState(learning_rate=lr)
    loss_val = None
    for _ in range(steps):
        g, loss = build_loss()
        grads = g.backward(loss)
        model.params.update(adam_step(adam, model.params.arrays, grads))
        loss_val = float(loss.value[0])
    return loss_val


@pytest.mark.slow
def test_seq2seq_overfits_five_character_utterance(rng):
    model = Seq2SeqModel(tiny_cfg(d_model=16, ff_hidden=32, label_smoothing=0.0), rng=np.random.default_rng(10))
    feats = {"video": rng.normal(size=(15, 6)), "audio": rng.normal(size=(15, 10))}
    ids = model.vocab.encode("hello")
    tin = np.array([model.vocab.sos_id] + ids)
    tout = np.array(ids + [model.vocab.eos_id])

    def build():
        g = Graph()
        lp = model.teacher_log_probs(g, feats, tin)
        return g, build_smoothed_cross_entropy(g, lp, tout, 0.0)

    final = _adam_fit(model, build, steps=500)
    assert final < 0.01  # teacher-forced log-likelihood approaches 0


@pytest.mark.slow
def test_ctc_overfits_single_utterance(rng):
    model = CtcModel(tiny_cfg(d_model=16, ff_hidden=32), rng=np.random.default_rng(11))
    feats = {"video": rng.normal(size=(12, 6)), "audio": rng.normal(size=(12, 10))}
    target = model.vocab.encode("abca")

    def build():
        g = Graph()
        lp = model.log_posteriors_node(g, feats)
        return g, build_ctc_loss(g, lp, target, model.vocab.blank_id)

    final = _adam_fit(model, build, steps=900)
    assert final < 0.01
