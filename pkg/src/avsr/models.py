"""The two character transducers sharing one encoder design.

Seq2SeqModel decodes autoregressively with, per decoder layer, independent
encoder-decoder attention over the video and audio encodings; the per-modality
context vectors are merged channel-wise through a per-configuration projection
(one weight block per modality plus a shared bias, the block form of
concatenation followed by a linear map). When a modality is absent only the
available block is applied, so a single-modality forward is bit-identical to
a dedicated single-modality model holding the same weights.

CtcModel fuses the per-modality encodings the same block-projection way and
runs a further self-attention stack, emitting per-frame log-posteriors over
the alphabet plus blank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, VocabularyError
from .nn import Params, linear, xavier_uniform
from .tensor import Graph, Node
from .transformer import (
    AttentionBlockParams,
    ModalityEncoder,
    ModelConfig,
    causal_mask,
    feed_forward_block,
    key_padding_mask,
    multi_head_attention,
    positional_encoding,
    self_attention_block,
    _heads,
    _maybe_dropout,
)
from .vocab import CharVocab

MODALITIES = ("video", "audio")
OUTPUT_INIT_SCALE = 0.1  # small head init keeps untrained outputs near-uniform


@dataclass
class EncoderOutput:
    """Per-modality encodings; a missing modality is simply None."""

    video: np.ndarray | None = None
    audio: np.ndarray | None = None
    video_valid: int | None = None
    audio_valid: int | None = None

    @property
    def available(self) -> tuple[str, ...]:
        return tuple(m for m in MODALITIES if getattr(self, m) is not None)

    def get(self, m: str):
        return getattr(self, m)


def _check_modalities(modalities) -> tuple[str, ...]:
    mods = tuple(modalities)
    if not mods or any(m not in MODALITIES for m in mods):
        raise ConfigError(f"modalities must be a non-empty subset of {MODALITIES}, got {modalities!r}")
    return mods


class _EncoderBank:
    """One ModalityEncoder per configured modality."""

    def __init__(self, params: Params, prefix: str, cfg: ModelConfig, modalities, rng):
        self.cfg = cfg
        self.encoders = {}
        d_in = {"video": cfg.d_vis, "audio": cfg.d_audio}
        for m in modalities:
            self.encoders[m] = ModalityEncoder(params, f"{prefix}.enc.{m}", d_in[m], cfg, rng)

    def encode(self, graph: Graph, p, feats: dict[str, np.ndarray], rng=None, valid: dict[str, int] | None = None) -> dict[str, Node]:
        present = {m: f for m, f in feats.items() if f is not None}
        if not present:
            raise DataError("encode: both modalities absent")
        unknown = set(present) - set(self.encoders)
        if unknown:
            raise ConfigError(f"model has no encoder for modalities {sorted(unknown)}")
        out = {}
        for m, f in present.items():
            v = (valid or {}).get(m)
            out[m] = self.encoders[m].build(graph, f, p, rng=rng, valid=v)
        return out


class Seq2SeqModel:
    """Dual-attention autoregressive character decoder."""

    def __init__(self, cfg: ModelConfig, modalities=MODALITIES, rng: np.random.Generator | None = None, prefix: str = "s2s"):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.vocab = CharVocab("seq2seq")
        self.modalities = _check_modalities(modalities)
        self.prefix = prefix
        self.params = Params()
        self.bank = _EncoderBank(self.params, prefix, cfg, self.modalities, rng)
        d = cfg.d_model
        self.params.add(f"{prefix}.dec.embed", xavier_uniform(rng, self.vocab.embed_size, d))
        for i in range(cfg.dec_layers):
            name = f"{prefix}.dec.l{i}"
            AttentionBlockParams.init_heads(self.params, f"{name}.self", cfg, rng)
            self.params.add(f"{name}.self.ln.g", np.ones(d))
            self.params.add(f"{name}.self.ln.b", np.zeros(d))
            for m in self.modalities:
                AttentionBlockParams.init_heads(self.params, f"{name}.cross.{m}", cfg, rng)
                self.params.add(f"{name}.fuse.w.{m}", xavier_uniform(rng, d, d))
            self.params.add(f"{name}.fuse.b", np.zeros(d))
            self.params.add(f"{name}.cross.ln.g", np.ones(d))
            self.params.add(f"{name}.cross.ln.b", np.zeros(d))
            AttentionBlockParams.init_ff(self.params, name, cfg, rng)
        self.params.add(f"{prefix}.out.w", OUTPUT_INIT_SCALE * xavier_uniform(rng, d, self.vocab.size))
        self.params.add(f"{prefix}.out.b", np.zeros(self.vocab.size))

    # -- forward -------------------------------------------------------------

    def encode(self, graph: Graph, p, feats: dict[str, np.ndarray], rng=None, valid=None) -> dict[str, Node]:
        return self.bank.encode(graph, p, feats, rng=rng, valid=valid)

    def decoder_logits(
        self,
        graph: Graph,
        p,
        enc: dict[str, Node],
        target_in: np.ndarray,
        rng=None,
        enc_valid: dict[str, int] | None = None,
    ) -> Node:
        """Teacher-forced pre-softmax logits [len(target_in) x 40]."""
        cfg = self.cfg
        target_in = np.asarray(target_in, dtype=np.int64)
        if target_in.size and target_in.max() >= self.vocab.embed_size:
            raise VocabularyError("decoder input contains out-of-vocabulary ids")
        t = len(target_in)
        x = graph.op("embedding", p[f"{self.prefix}.dec.embed"], ids=target_in)
        x = graph.op("add", x, graph.constant(positional_encoding(t, cfg.d_model)))
        x = _maybe_dropout(graph, x, cfg.dropout, rng)
        causal = causal_mask(t)
        for i in range(cfg.dec_layers):
            name = f"{self.prefix}.dec.l{i}"
            sa = multi_head_attention(graph, x, x, x, _heads(p, f"{name}.self", cfg.heads), mask=causal)
            x = graph.op("layer_norm", graph.op("add", x, _maybe_dropout(graph, sa, cfg.dropout, rng)), p[f"{name}.self.ln.g"], p[f"{name}.self.ln.b"])
            ctx = None
            for m in self.modalities:
                if m not in enc:
                    continue
                v = (enc_valid or {}).get(m)
                mask = key_padding_mask(v, enc[m].shape[0]) if v is not None and v < enc[m].shape[0] else None
                cm = multi_head_attention(graph, x, enc[m], enc[m], _heads(p, f"{name}.cross.{m}", cfg.heads), mask=mask)
                pm = graph.op("matmul", cm, p[f"{name}.fuse.w.{m}"])
                ctx = pm if ctx is None else graph.op("add", ctx, pm)
            if ctx is None:
                raise DataError("decoder: no encoded modality available")
            ctx = graph.op("add", ctx, p[f"{name}.fuse.b"])
            x = graph.op("layer_norm", graph.op("add", x, _maybe_dropout(graph, ctx, cfg.dropout, rng)), p[f"{name}.cross.ln.g"], p[f"{name}.cross.ln.b"])
            x = feed_forward_block(graph, x, p, name, cfg, rng)
        return linear(graph, x, p[f"{self.prefix}.out.w"], p[f"{self.prefix}.out.b"])

    def teacher_log_probs(self, graph: Graph, feats: dict[str, np.ndarray], target_in: np.ndarray, rng=None, valid=None, enc_valid=None):
        """Bind params, encode, decode: log-probabilities [T_t x 40]."""
        p = self.params.bind(graph)
        enc = self.encode(graph, p, feats, rng=rng, valid=valid)
        logits = self.decoder_logits(graph, p, enc, target_in, rng=rng, enc_valid=enc_valid)
        return graph.op("log_softmax_last", logits)

    # -- inference -----------------------------------------------------------

    def encode_arrays(self, feats: dict[str, np.ndarray]) -> EncoderOutput:
        """Inference-mode encoding to plain arrays."""
        graph = Graph()
        p = self.params.bind(graph)
        enc = self.encode(graph, p, feats)
        return EncoderOutput(
            video=enc["video"].value if "video" in enc else None,
            audio=enc["audio"].value if "audio" in enc else None,
        )

    def step_log_probs(self, encs: list[EncoderOutput], prefix_ids) -> np.ndarray:
        """Next-symbol log-probs for a decode prefix.

        `encs` may hold several encoder outputs (test-time augmentation);
        their pre-softmax logits are averaged before normalizing.
        """
        target_in = np.asarray([self.vocab.sos_id] + list(prefix_ids), dtype=np.int64)
        rows = []
        for e in encs:
            graph = Graph()
            p = self.params.bind(graph)
            enc_nodes = {m: graph.constant(e.get(m)) for m in self.modalities if e.get(m) is not None}
            logits = self.decoder_logits(graph, p, enc_nodes, target_in)
            rows.append(logits.value[-1])
        mean = np.mean(rows, axis=0)
        z = mean - mean.max()
        return z - np.log(np.exp(z).sum())


class CtcModel:
    """Per-modality encoders, block-projection fusion, self-attention stack,
    per-frame posteriors over alphabet + blank."""

    def __init__(self, cfg: ModelConfig, modalities=MODALITIES, rng: np.random.Generator | None = None, prefix: str = "ctc"):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.vocab = CharVocab("ctc")
        self.modalities = _check_modalities(modalities)
        self.prefix = prefix
        self.params = Params()
        self.bank = _EncoderBank(self.params, prefix, cfg, self.modalities, rng)
        d = cfg.d_model
        for m in self.modalities:
            self.params.add(f"{prefix}.fuse.w.{m}", xavier_uniform(rng, d, d))
        self.params.add(f"{prefix}.fuse.b", np.zeros(d))
        for i in range(cfg.ctc_layers):
            AttentionBlockParams.init(self.params, f"{prefix}.stack.l{i}", cfg, rng)
        self.params.add(f"{prefix}.out.w", OUTPUT_INIT_SCALE * xavier_uniform(rng, d, self.vocab.output_size))
        self.params.add(f"{prefix}.out.b", np.zeros(self.vocab.output_size))

    def log_posteriors_node(self, graph: Graph, feats: dict[str, np.ndarray], rng=None, valid: dict[str, int] | None = None) -> Node:
        present = [m for m in MODALITIES if feats.get(m) is not None]
        if len(present) == 2 and feats["video"].shape[0] != feats["audio"].shape[0]:
            raise DataError(
                f"frame counts differ between modalities: video {feats['video'].shape[0]} vs audio {feats['audio'].shape[0]}"
            )
        p = self.params.bind(graph)
        enc = self.bank.encode(graph, p, feats, rng=rng, valid=valid)
        fused = None
        for m in self.modalities:
            if m not in enc:
                continue
            pm = graph.op("matmul", enc[m], p[f"{self.prefix}.fuse.w.{m}"])
            fused = pm if fused is None else graph.op("add", fused, pm)
        fused = graph.op("add", fused, p[f"{self.prefix}.fuse.b"])
        t = fused.shape[0]
        v = (valid or {}).get(present[0])
        mask = key_padding_mask(v, t) if v is not None and v < t else None
        x = fused
        for i in range(self.cfg.ctc_layers):
            x = self_attention_block(graph, x, p, f"{self.prefix}.stack.l{i}", self.cfg, mask=mask, rng=rng)
        logits = linear(graph, x, p[f"{self.prefix}.out.w"], p[f"{self.prefix}.out.b"])
        return graph.op("log_softmax_last", logits)

    def log_posteriors(self, feats: dict[str, np.ndarray]) -> np.ndarray:
        graph = Graph()
        return self.log_posteriors_node(graph, feats).value
