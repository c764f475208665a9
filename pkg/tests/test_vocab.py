"""Output alphabet and mode extras."""

import pytest

from avsr.errors import VocabularyError
from avsr.vocab import BASE_SYMBOLS, CharVocab


def test_base_alphabet_is_exactly_forty():
    assert len(BASE_SYMBOLS) == 40
    assert len(set(BASE_SYMBOLS)) == 40


def test_seq2seq_mode_has_start_extra_but_no_blank():
    v = CharVocab("seq2seq")
    assert v.size == 40
    assert v.output_size == 40
    assert v.embed_size == 41  # start token embeds but is never an output
    assert v.blank_id is None
    assert v.sos_id == 40


def test_ctc_mode_has_blank_extra_but_no_start():
    v = CharVocab("ctc")
    assert v.output_size == 41
    assert v.blank_id == 40
    assert v.sos_id is None


def test_blank_and_start_never_share_an_output_layer():
    for mode in ("seq2seq", "ctc"):
        v = CharVocab(mode)
        assert (v.sos_id is None) != (v.blank_id is None)


def test_encode_decode_round_trip():
    v = CharVocab("seq2seq")
    text = "the quick brown fox 123 o'clock"
    assert v.decode(v.encode(text)) == text


def test_decode_strips_special_ids():
    v = CharVocab("ctc")
    ids = v.encode("ab") + [v.blank_id, v.pad_id, v.eos_id]
    assert v.decode(ids) == "ab"


def test_out_of_vocabulary_symbol_rejected():
    v = CharVocab("seq2seq")
    with pytest.raises(VocabularyError, match="Z"):
        v.encode("aZb")
    with pytest.raises(VocabularyError):
        v.encode("句")


def test_pad_index_is_fixed():
    assert CharVocab("seq2seq").pad_id == CharVocab("ctc").pad_id == 39


def test_unknown_mode_rejected():
    with pytest.raises(VocabularyError):
        CharVocab("word")
