"""Positional encodings, attention semantics, encoder stacks."""

import math

import numpy as np
import pytest

from avsr.errors import ShapeError
from avsr.nn import Params
from avsr.tensor import Graph
from avsr.transformer import (
    ModalityEncoder,
    ModelConfig,
    causal_mask,
    multi_head_attention,
    positional_encoding,
)


def test_position_zero_alternates_zero_one():
    pe = positional_encoding(3, 8)
    np.testing.assert_array_equal(pe[0, 0::2], np.zeros(4))
    np.testing.assert_array_equal(pe[0, 1::2], np.ones(4))


def test_first_column_is_plain_sine():
    pe = positional_encoding(20, 8)
    np.testing.assert_allclose(pe[:, 0], np.sin(np.arange(20)), atol=1e-12)
    np.testing.assert_allclose(pe[:, 1], np.cos(np.arange(20)), atol=1e-12)


def test_matches_direct_closed_form_table():
    d = 8
    pe = positional_encoding(17, d)
    for pos in range(17):
        for i in range(d):
            angle = pos / (10000 ** ((2 * (i // 2)) / d))
            expected = math.sin(angle) if i % 2 == 0 else math.cos(angle)
            assert math.isclose(pe[pos, i], expected, abs_tol=1e-12)


def test_wavelengths_grow_with_dimension():
    pe = positional_encoding(64, 8)
    # higher dimensions oscillate slower: fewer sign changes
    changes = [(np.diff(np.sign(pe[:, i])) != 0).sum() for i in (0, 2, 4)]
    assert changes[0] > changes[1] > changes[2]


def _head_nodes(graph, rng, d, d_k, n_heads, identity=False):
    heads = []
    for _ in range(n_heads):
        mk = (lambda: np.eye(d)) if identity else (lambda: rng.normal(size=(d, d_k)))
        heads.append(tuple(graph.constant(mk()) for _ in range(3)))
    return heads


def test_single_key_gets_weight_one_and_projected_value(rng):
    g = Graph()
    d, d_k = 4, 4
    q = g.constant(rng.normal(size=(3, d)))
    kv = g.constant(rng.normal(size=(1, d)))
    heads = _head_nodes(g, rng, d, d_k, 1)
    out = multi_head_attention(g, q, kv, kv, heads)
    att = [n for n in g.nodes if n.op == "softmax_last"][0]
    np.testing.assert_array_equal(att.value, np.ones((3, 1)))
    np.testing.assert_allclose(out.value, np.tile(kv.value @ heads[0][2].value, (3, 1)), atol=1e-12)


def test_identity_projection_one_hot_rows_concentrate_on_matching_position():
    g = Graph()
    x = g.constant(np.eye(2))
    heads = [(g.constant(np.eye(2)), g.constant(np.eye(2)), g.constant(np.eye(2)))]
    out = multi_head_attention(g, x, x, x, heads)
    # direct evaluation: logits = I/sqrt(2); softmax([s,0]) with s=1/sqrt(2)
    s = 1 / math.sqrt(2)
    w_match = math.exp(s) / (math.exp(s) + 1)
    att = [n for n in g.nodes if n.op == "softmax_last"][0]
    np.testing.assert_allclose(np.diag(att.value), [w_match, w_match], atol=1e-12)
    assert (np.diag(att.value) > 0.5).all()
    expected_row0 = np.array([w_match, 1 - w_match])
    np.testing.assert_allclose(out.value[0], expected_row0 @ np.eye(2), atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_attention_rows_sum_to_one_under_any_mask(seed):
    rng = np.random.default_rng(seed)
    g = Graph()
    q = g.constant(rng.normal(size=(5, 8)))
    kv = g.constant(rng.normal(size=(7, 8)))
    mask = rng.random((5, 7)) < 0.6
    mask[:, 0] = True  # at least one unmasked key per row
    heads = _head_nodes(g, rng, 8, 4, 2)
    multi_head_attention(g, q, kv, kv, heads, mask=mask)
    for node in g.nodes:
        if node.op == "softmax_last":
            np.testing.assert_allclose(node.value.sum(axis=-1), np.ones(5), atol=1e-9)
            assert (node.value[~np.broadcast_to(mask, node.value.shape)] == 0).all()


def test_empty_key_sequence_rejected(rng):
    g = Graph()
    q = g.constant(rng.normal(size=(2, 4)))
    kv = g.constant(np.zeros((0, 4)))
    heads = _head_nodes(g, rng, 4, 2, 1)
    with pytest.raises(ShapeError, match="empty"):
        multi_head_attention(g, q, kv, kv, heads)


def test_key_value_length_mismatch_rejected(rng):
    g = Graph()
    q = g.constant(rng.normal(size=(2, 4)))
    k = g.constant(rng.normal(size=(3, 4)))
    v = g.constant(rng.normal(size=(4, 4)))
    with pytest.raises(ShapeError, match="length"):
        multi_head_attention(g, q, k, v, _head_nodes(g, rng, 4, 2, 1))


def test_mask_shape_mismatch_rejected(rng):
    g = Graph()
    q = g.constant(rng.normal(size=(2, 4)))
    heads = _head_nodes(g, rng, 4, 2, 1)
    with pytest.raises(ShapeError, match="mask"):
        multi_head_attention(g, q, q, q, heads, mask=np.ones((3, 5), dtype=bool))


def test_causal_mask_is_lower_triangular():
    m = causal_mask(4)
    assert m[2, 2] and m[3, 0] and not m[0, 1] and not m[2, 3]


def _toy_encoder(d_in=5, seed=0):
    cfg = ModelConfig(d_model=8, heads=2, ff_hidden=16, enc_layers=2, dropout=0.0, d_vis=d_in, d_audio=d_in)
    params = Params()
    enc = ModalityEncoder(params, "enc.video", d_in, cfg, np.random.default_rng(seed))
    return cfg, params, enc


def test_encoder_output_shape_and_single_frame_degenerate(rng):
    cfg, params, enc = _toy_encoder()
    for t in (1, 4):
        g = Graph()
        out = enc.build(g, rng.normal(size=(t, 5)), params.bind(g))
        assert out.shape == (t, cfg.d_model)


def test_permuting_encoder_input_rows_changes_output(rng):
    cfg, params, enc = _toy_encoder()
    x = rng.normal(size=(3, 5))
    g1, g2 = Graph(), Graph()
    out = enc.build(g1, x, params.bind(g1)).value
    out_perm = enc.build(g2, x[[2, 0, 1]], params.bind(g2)).value
    assert not np.allclose(out, out_perm[[1, 2, 0]])  # positions break permutation symmetry


def test_key_padding_mask_hides_padded_rows(rng):
    cfg, params, enc = _toy_encoder()
    x = rng.normal(size=(6, 5))
    x_padded = np.vstack([x[:4], np.zeros((2, 5))])
    g1 = Graph()
    out_valid = enc.build(g1, x[:4], params.bind(g1)).value
    g2 = Graph()
    out_padded = enc.build(g2, x_padded, params.bind(g2), valid=4).value
    np.testing.assert_allclose(out_padded[:4], out_valid, atol=1e-12)
