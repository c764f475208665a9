"""Self-attention building blocks: sinusoid positions, multi-head attention,
per-modality encoder stacks.

Attention follows the scaled dot-product form with per-head projection
matrices; the h context vectors are concatenated and the two-linear-layer
feed-forward block (ReLU between) is applied, with residual connections and
layer normalization around both sub-blocks (post-norm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import Params, linear, xavier_uniform
from .tensor import Graph, Node

NORM_STYLE = "post"  # recorded choice; the residual sum is normalized


@dataclass
class ModelConfig:
    """Architecture hyperparameters. The full-scale values (512/8/2048, depth
    6) stay selectable; the desk-scale defaults keep gradient checks and toy
    training fast."""

    d_model: int = 64
    heads: int = 4
    ff_hidden: int = 2048 // 8  # F1; F2 always equals d_model
    enc_layers: int = 3
    dec_layers: int = 3
    ctc_layers: int = 3
    dropout: float = 0.1
    label_smoothing: float = 0.1
    d_vis: int = 32
    d_audio: int = 1284
    max_len: int = 512

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if not (0 <= self.dropout < 1):
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")
        if not (0 <= self.label_smoothing < 1):
            raise ConfigError(f"label smoothing must be in [0,1), got {self.label_smoothing}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    @staticmethod
    def paper_scale() -> "ModelConfig":
        return ModelConfig(d_model=512, heads=8, ff_hidden=2048, enc_layers=6, dec_layers=6, ctc_layers=6, d_vis=512)


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Fixed sinusoid embeddings: even dims sin(pos/10000^(2i/d)), odd dims cos."""
    if length < 1:
        raise ShapeError(f"positional encoding needs length >= 1, got {length}")
    pos = np.arange(length)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


def causal_mask(n: int) -> np.ndarray:
    """Boolean [n x n], True where key position <= query position."""
    return np.tril(np.ones((n, n), dtype=bool))


def key_padding_mask(valid: int, total: int) -> np.ndarray:
    """Boolean [1 x total], True on real key positions."""
    m = np.zeros((1, total), dtype=bool)
    m[0, :valid] = True
    return m


def multi_head_attention(
    graph: Graph,
    q: Node,
    k: Node,
    v: Node,
    heads: list[tuple[Node, Node, Node]],
    mask: np.ndarray | None = None,
) -> Node:
    """Concatenated per-head scaled dot-product attention.

    q [Lq x d], k/v [Lk x d]; each head holds (wq, wk, wv) of [d x d_k].
    Masked logits are excluded from the softmax (weight exactly 0).
    """
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: key length {k.shape[0]} != value length {v.shape[0]}")
    if k.shape[0] == 0:
        raise ShapeError("attention: empty key sequence")
    d_k = heads[0][0].shape[1]
    outs = []
    for wq, wk, wv in heads:
        qi = graph.op("matmul", q, wq)
        ki = graph.op("matmul", k, wk)
        vi = graph.op("matmul", v, wv)
        logits = graph.op("scale", graph.op("matmul", qi, graph.op("transpose", ki)), factor=1.0 / math.sqrt(d_k))
        att = graph.op("softmax_last", logits, mask=mask)
        outs.append(graph.op("matmul", att, vi))
    return outs[0] if len(outs) == 1 else graph.op("concat_last", *outs)


def _maybe_dropout(graph: Graph, x: Node, p: float, rng) -> Node:
    if p > 0 and rng is not None:
        return graph.op("dropout", x, p=p, rng=rng)
    return x


class AttentionBlockParams:
    """Parameter initialization for one attention + feed-forward block."""

    @staticmethod
    def init_heads(params: Params, name: str, cfg: ModelConfig, rng) -> None:
        d, dk = cfg.d_model, cfg.d_k
        for i in range(cfg.heads):
            params.add(f"{name}.att.h{i}.wq", xavier_uniform(rng, d, dk))
            params.add(f"{name}.att.h{i}.wk", xavier_uniform(rng, d, dk))
            params.add(f"{name}.att.h{i}.wv", xavier_uniform(rng, d, dk))

    @staticmethod
    def init(params: Params, name: str, cfg: ModelConfig, rng) -> None:
        AttentionBlockParams.init_heads(params, name, cfg, rng)
        params.add(f"{name}.ln1.g", np.ones(cfg.d_model))
        params.add(f"{name}.ln1.b", np.zeros(cfg.d_model))
        AttentionBlockParams.init_ff(params, name, cfg, rng)

    @staticmethod
    def init_ff(params: Params, name: str, cfg: ModelConfig, rng) -> None:
        d, f1 = cfg.d_model, cfg.ff_hidden
        params.add(f"{name}.ff.w1", xavier_uniform(rng, d, f1))
        params.add(f"{name}.ff.b1", np.zeros(f1))
        params.add(f"{name}.ff.w2", xavier_uniform(rng, f1, d))
        params.add(f"{name}.ff.b2", np.zeros(d))
        params.add(f"{name}.ln2.g", np.ones(d))
        params.add(f"{name}.ln2.b", np.zeros(d))


def _heads(p: dict[str, Node], name: str, n: int) -> list[tuple[Node, Node, Node]]:
    return [(p[f"{name}.att.h{i}.wq"], p[f"{name}.att.h{i}.wk"], p[f"{name}.att.h{i}.wv"]) for i in range(n)]


def self_attention_block(
    graph: Graph,
    x: Node,
    p: dict[str, Node],
    name: str,
    cfg: ModelConfig,
    mask: np.ndarray | None = None,
    rng=None,
) -> Node:
    """LN(x + attention) then LN(x + feed-forward)."""
    att = multi_head_attention(graph, x, x, x, _heads(p, name, cfg.heads), mask=mask)
    x = graph.op("layer_norm", graph.op("add", x, _maybe_dropout(graph, att, cfg.dropout, rng)), p[f"{name}.ln1.g"], p[f"{name}.ln1.b"])
    return feed_forward_block(graph, x, p, name, cfg, rng)


def feed_forward_block(graph: Graph, x: Node, p: dict[str, Node], name: str, cfg: ModelConfig, rng=None) -> Node:
    ff = linear(graph, graph.op("relu", linear(graph, x, p[f"{name}.ff.w1"], p[f"{name}.ff.b1"])), p[f"{name}.ff.w2"], p[f"{name}.ff.b2"])
    return graph.op("layer_norm", graph.op("add", x, _maybe_dropout(graph, ff, cfg.dropout, rng)), p[f"{name}.ln2.g"], p[f"{name}.ln2.b"])


class ModalityEncoder:
    """Input projection + positional encoding + a self-attention stack."""

    def __init__(self, params: Params, name: str, d_in: int, cfg: ModelConfig, rng):
        self.name = name
        self.cfg = cfg
        params.add(f"{name}.in.w", xavier_uniform(rng, d_in, cfg.d_model))
        params.add(f"{name}.in.b", np.zeros(cfg.d_model))
        for i in range(cfg.enc_layers):
            AttentionBlockParams.init(params, f"{name}.l{i}", cfg, rng)

    def build(self, graph: Graph, feats, p: dict[str, Node], rng=None, valid: int | None = None) -> Node:
        """`feats` is a [T x d_in] array, or an in-graph node when the visual
        front-end is trained jointly."""
        if not isinstance(feats, Node):
            feats = graph.constant(np.asarray(feats, dtype=np.float64))
        t = feats.shape[0]
        x = linear(graph, feats, p[f"{self.name}.in.w"], p[f"{self.name}.in.b"])
        x = graph.op("add", x, graph.constant(positional_encoding(t, self.cfg.d_model)))
        x = _maybe_dropout(graph, x, self.cfg.dropout, rng)
        mask = key_padding_mask(valid, t) if valid is not None and valid < t else None
        for i in range(self.cfg.enc_layers):
            x = self_attention_block(graph, x, p, f"{self.name}.l{i}", self.cfg, mask=mask, rng=rng)
        return x
