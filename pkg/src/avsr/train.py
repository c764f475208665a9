"""Training loops: staged schedule, curriculum, noise injection, plateau LR.

The staged schedule mirrors the four-phase recipe: (i) pretrain the visual
front-end as a word classifier with a 2-layer temporal-convolution back-end,
(ii) extract frozen visual features, (iii) train the sequence model on the
frozen features under the length curriculum with probabilistic babble
injection, (iv) fine-tune end-to-end. Feature-mode corpora skip (i)/(ii)/(iv)
since their features are already extracted.

Every epoch draws its randomness from a generator keyed by (seed, epoch), so
resuming from a checkpoint replays the exact same batches, dropout masks and
noise decisions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .audio import Waveform
from .beam import BeamConfig, seq2seq_beam
from .config import RunConfig
from .corpus import (
    AugmentConfig,
    CurriculumPolicy,
    FRAMES_PER_CHAR,
    TRAIN_NOISE_P,
    Utterance,
    augment_visual,
    desync,
    mix_babble,
    utterance_features,
)
from .errors import ConfigError, DataError
from .losses import build_ctc_loss, build_smoothed_cross_entropy
from .models import CtcModel, Seq2SeqModel
from .nn import Params, xavier_uniform
from .optim import AdamState, PlateauScheduler, adam_step
from .scoring import EditOps, align
from .tensor import Graph, Node
from .video import VideoClip, VisualFrontend
from .vocab import CharVocab

STAGE_PLATEAU_PATIENCE = 2
STAGE_PLATEAU_DELTA = 1e-3


def _epoch_rng(seed: int, epoch: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0xE0 + salt, epoch]))


def _pad_rows(mat: np.ndarray, rows: int) -> np.ndarray:
    if mat.shape[0] >= rows:
        return mat
    out = np.zeros((rows, mat.shape[1]))
    out[: mat.shape[0]] = mat
    return out


@dataclass
class TrainItem:
    uid: str
    feats: dict[str, np.ndarray | None]
    valid: dict[str, int]
    target_ids: list[int]
    target_in: np.ndarray | None = None
    target_out: np.ndarray | None = None
    clip: VideoClip | None = None  # set when the front-end trains in the loop
    frame_cap: int = 0


def assemble_item(
    u: Utterance,
    vocab: CharVocab,
    arch: str,
    modalities,
    cap: int | None,
    frontend: VisualFrontend | None = None,
    waveform: Waveform | None = None,
    end_to_end: bool = False,
) -> TrainItem:
    """Features zero-padded to the stage cap; targets padded for teacher forcing.

    With end_to_end=True a pixel clip is kept on the item so the loss graph
    can run the front-end jointly instead of consuming frozen features.
    """
    keep_clip = end_to_end and "video" in modalities and isinstance(u.video, VideoClip)
    feat_mods = tuple(m for m in modalities if not (m == "video" and keep_clip))
    feats = utterance_features(u, feat_mods, frontend, waveform)
    ids = vocab.encode(u.transcript)
    n_chars = len(ids)
    pad_chars = cap if cap is not None else n_chars
    if n_chars > pad_chars:
        raise DataError(f"{u.uid}: transcript of {n_chars} chars exceeds the stage cap {pad_chars}")
    frame_cap = pad_chars * FRAMES_PER_CHAR
    valid = {}
    for m in ("video", "audio"):
        if feats[m] is not None:
            valid[m] = feats[m].shape[0]
            feats[m] = _pad_rows(feats[m], frame_cap)
    item = TrainItem(uid=u.uid, feats=feats, valid=valid, target_ids=ids, frame_cap=frame_cap)
    if keep_clip:
        item.clip = u.video
        item.valid["video"] = u.video.frames.shape[0]
    if arch == "seq2seq":
        t_in = np.full(pad_chars + 1, vocab.pad_id, dtype=np.int64)
        t_in[0] = vocab.sos_id
        t_in[1 : n_chars + 1] = ids
        t_out = np.full(pad_chars + 1, vocab.pad_id, dtype=np.int64)
        t_out[:n_chars] = ids
        t_out[n_chars] = vocab.eos_id
        item.target_in, item.target_out = t_in, t_out
    return item


# ---------------------------------------------------------------------------
# loss evaluation
# ---------------------------------------------------------------------------


def item_loss(model, item: TrainItem, rng=None, frontend: VisualFrontend | None = None):
    """Build the per-item graph and scalar loss node. rng=None disables dropout.

    When the item carries a pixel clip (end-to-end stage) the front-end runs
    inside the same graph so its parameters receive gradients too."""
    graph = Graph()
    feats = dict(item.feats)
    if item.clip is not None:
        if frontend is None:
            raise ConfigError("end-to-end item needs the visual front-end")
        vnode = frontend.build(graph, item.clip)
        t = vnode.shape[0]
        if t < item.frame_cap:
            vnode = graph.op("pad", vnode, widths=[(0, item.frame_cap - t), (0, 0)])
        feats["video"] = vnode
    if isinstance(model, Seq2SeqModel):
        lp = model.teacher_log_probs(graph, feats, item.target_in, rng=rng, valid=item.valid, enc_valid=item.valid)
        loss = build_smoothed_cross_entropy(graph, lp, item.target_out, model.cfg.label_smoothing, pad_id=model.vocab.pad_id)
    else:
        lp = model.log_posteriors_node(graph, feats, rng=rng, valid=item.valid)
        t_true = max(item.valid.values())
        if t_true < lp.shape[0]:
            k = lp.shape[1]
            picked = graph.op("take_flat", lp, idx=np.arange(t_true * k))
            lp = graph.op("reshape", picked, shape=(t_true, k))
        loss = build_ctc_loss(graph, lp, item.target_ids, model.vocab.blank_id)
    return graph, loss


# ---------------------------------------------------------------------------
# greedy validation decoding
# ---------------------------------------------------------------------------


def greedy_ctc(model: CtcModel, feats) -> str:
    lp = model.log_posteriors(feats)
    best = lp.argmax(axis=1)
    out = []
    prev = -1
    for idx in best:
        if idx != prev and idx != model.vocab.blank_id:
            out.append(int(idx))
        prev = idx
    return model.vocab.decode(out)


def greedy_seq2seq(model: Seq2SeqModel, feats, max_len: int = 100) -> str:
    enc = model.encode_arrays(feats)
    cfg = BeamConfig(width=1, lm_weight=0.0, length_penalty=0.0, mode="seq2seq")
    text, _ = seq2seq_beam(model, enc, cfg=cfg, max_len=max_len)
    return text


def corpus_wer(model, utterances, modalities, frontend=None, decode=None) -> float:
    """Aggregate WER (percent) of a greedy or supplied decode over utterances."""
    total = EditOps()
    for u in utterances:
        feats = utterance_features(u, modalities, frontend)
        if decode is not None:
            hyp = decode(u, feats)
        elif isinstance(model, CtcModel):
            hyp = greedy_ctc(model, feats)
        else:
            hyp = greedy_seq2seq(model, feats)
        total.merge(align(u.transcript, hyp))
    return 100.0 * total.distance / total.n


# ---------------------------------------------------------------------------
# sequence-model trainer
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    stage: int
    learning_rate: float
    train_loss: float
    val_wer: float | None
    seconds: float


@dataclass
class TrainerState:
    """Mutable run state persisted through checkpoints for exact resume."""

    epoch: int = 0
    stage: int = 0
    lr_best: float = np.inf
    lr_stale: int = 0
    stage_best: float = np.inf
    stage_stale: int = 0

    def to_dict(self) -> dict[str, str]:
        return {f"trainer.{k}": str(v) for k, v in vars(self).items()}

    @staticmethod
    def from_dict(d: dict[str, str]) -> "TrainerState":
        st = TrainerState()
        for k in vars(st):
            if f"trainer.{k}" in d:
                cast = int if isinstance(getattr(st, k), int) else float
                setattr(st, k, cast(d[f"trainer.{k}"]))
        return st


class SequenceTrainer:
    """Curriculum training of either architecture on frozen/extracted features."""

    def __init__(
        self,
        run_cfg: RunConfig,
        model,
        frontend: VisualFrontend | None = None,
        adam: AdamState | None = None,
        state: TrainerState | None = None,
        noise_pool: list[Waveform] | None = None,
        end_to_end: bool = False,
    ):
        self.cfg = run_cfg
        self.model = model
        self.frontend = frontend
        self.end_to_end = end_to_end and frontend is not None
        self.arch = "seq2seq" if isinstance(model, Seq2SeqModel) else "ctc"
        self.modalities = run_cfg.modality_tuple()
        self.curriculum = CurriculumPolicy(run_cfg.curriculum_schedule())
        self.adam = adam or AdamState(learning_rate=run_cfg.learning_rate)
        self.state = state or TrainerState()
        self.lr_sched = PlateauScheduler(self.adam, patience=run_cfg.lr_patience, floor=run_cfg.lr_floor)
        self.lr_sched.best = self.state.lr_best
        self.lr_sched.stale = self.state.lr_stale
        self.noise_pool = noise_pool
        self.temporal_jitter = 0  # max random video desync applied per item per epoch
        self.history: list[EpochStats] = []

    # -- one epoch -----------------------------------------------------------

    def _noisy_waveform(self, u: Utterance, rng: np.random.Generator) -> Waveform | None:
        if self.noise_pool is None or "audio" not in self.modalities:
            return None
        if self.cfg.always_noise or rng.random() < self.cfg.noise_p:
            return mix_babble(u, self.cfg.noise_snr_db, self.noise_pool, rng).waveform
        return None

    def run_epoch(self, utterances: list[Utterance], epoch: int) -> float:
        rng = _epoch_rng(self.cfg.seed, epoch)
        pool = self.curriculum.pool(self.state.stage, utterances)
        if not pool:
            raise DataError(f"curriculum stage {self.state.stage} selected an empty pool")
        cap = self.curriculum.pad_cap(self.state.stage, pool)
        order = rng.permutation(len(pool))
        losses = []
        batch_grads: dict[str, np.ndarray] = {}
        batch_n = 0
        for j in order:
            u = pool[int(j)]
            if self.temporal_jitter > 0 and "video" in self.modalities:
                k = int(rng.integers(-self.temporal_jitter, self.temporal_jitter + 1))
                if k and abs(k) < u.n_frames:
                    u = desync(u, k)
            wav = self._noisy_waveform(u, rng)
            item = assemble_item(
                u, self.model.vocab, self.arch, self.modalities, cap, self.frontend, wav, end_to_end=self.end_to_end
            )
            graph, loss = item_loss(self.model, item, rng=rng if self.model.cfg.dropout > 0 else None, frontend=self.frontend)
            losses.append(float(loss.value[0]))
            grads = graph.backward(loss)
            for name, g in grads.items():
                if name in batch_grads:
                    batch_grads[name] += g
                else:
                    batch_grads[name] = g.copy()
            batch_n += 1
            if batch_n == self.cfg.batch_size:
                self._apply(batch_grads, batch_n)
                batch_grads, batch_n = {}, 0
        if batch_n:
            self._apply(batch_grads, batch_n)
        return float(np.mean(losses))

    def evaluate_loss(self, utterances: list[Utterance]) -> float:
        """Mean per-utterance loss at natural lengths, no updates, no dropout."""
        losses = []
        for u in utterances:
            item = assemble_item(u, self.model.vocab, self.arch, self.modalities, None, self.frontend)
            _, loss = item_loss(self.model, item, rng=None, frontend=self.frontend)
            losses.append(float(loss.value[0]))
        return float(np.mean(losses))

    def _apply(self, grads: dict[str, np.ndarray], n: int) -> None:
        params = dict(self.model.params.arrays)
        if self.end_to_end:
            params.update(self.frontend.params.arrays)
        scaled = {k: (grads[k] / n if k in grads else np.zeros_like(v)) for k, v in params.items()}
        new = adam_step(self.adam, params, scaled)
        self.model.params.update({k: v for k, v in new.items() if k in self.model.params.arrays})
        if self.end_to_end:
            self.frontend.params.update({k: v for k, v in new.items() if k in self.frontend.params.arrays})

    # -- full run -------------------------------------------------------------

    def _advance_stage_on(self, train_loss: float) -> None:
        if self.state.stage >= self.curriculum.n_stages - 1:
            return
        if self.cfg.stage_epochs > 0:
            if (self.state.epoch + 1) % self.cfg.stage_epochs == 0:
                self.state.stage += 1
            return
        if train_loss < self.state.stage_best - STAGE_PLATEAU_DELTA:
            self.state.stage_best = train_loss
            self.state.stage_stale = 0
            return
        self.state.stage_stale += 1
        if self.state.stage_stale >= STAGE_PLATEAU_PATIENCE:
            self.state.stage += 1
            self.state.stage_stale = 0
            self.state.stage_best = np.inf

    def run(self, train_utts, val_utts=None, epochs: int | None = None, log=None) -> list[EpochStats]:
        epochs = epochs if epochs is not None else self.cfg.epochs
        end = self.state.epoch + epochs
        while self.state.epoch < end:
            t0 = time.time()
            train_loss = self.run_epoch(train_utts, self.state.epoch)
            val_wer = None
            if val_utts:
                val_wer = corpus_wer(self.model, val_utts, self.modalities, self.frontend)
                self.lr_sched.report(val_wer)
            else:
                self.lr_sched.report(train_loss)
            self._advance_stage_on(train_loss)
            stats = EpochStats(
                epoch=self.state.epoch,
                stage=self.state.stage,
                learning_rate=self.adam.learning_rate,
                train_loss=train_loss,
                val_wer=val_wer,
                seconds=time.time() - t0,
            )
            self.history.append(stats)
            if log:
                wer_text = "-" if val_wer is None else f"{val_wer:.2f}"
                log(f"epoch {stats.epoch:3d} stage {stats.stage} lr {stats.learning_rate:.2e} loss {train_loss:.4f} val_wer {wer_text} ({stats.seconds:.1f}s)")
            self.state.epoch += 1
            self.state.lr_best = self.lr_sched.best
            self.state.lr_stale = self.lr_sched.stale
        return self.history


# ---------------------------------------------------------------------------
# front-end pretraining: word classification with a temporal-conv back-end
# ---------------------------------------------------------------------------


class WordClassifier:
    """Frozen-vocabulary word classifier: front-end + 2 temporal conv layers."""

    def __init__(self, frontend: VisualFrontend, words: list[str], hidden: int = 32, rng=None):
        if len(words) < 2:
            raise DataError(f"word classification needs >= 2 classes, got {len(words)}")
        rng = rng or np.random.default_rng(0)
        self.frontend = frontend
        self.words = sorted(words)
        self.word_index = {w: i for i, w in enumerate(self.words)}
        d = frontend.cfg.feature_dim
        self.params = Params()
        self.params.add("wc.conv1.w", xavier_uniform(rng, 3 * d, hidden))
        self.params.add("wc.conv1.b", np.zeros(hidden))
        self.params.add("wc.conv2.w", xavier_uniform(rng, 3 * hidden, hidden))
        self.params.add("wc.conv2.b", np.zeros(hidden))
        self.params.add("wc.out.w", xavier_uniform(rng, hidden, len(self.words)))
        self.params.add("wc.out.b", np.zeros(len(self.words)))

    @staticmethod
    def _temporal_conv(graph, x, w, b):
        t, d = x.shape
        idx_t = np.clip(np.arange(t)[:, None] + np.array([-1, 0, 1])[None, :], 0, t - 1)
        idx = (idx_t[..., None] * d + np.arange(d)[None, None, :]).reshape(t, 3 * d)
        cols = graph.op("take_flat", x, idx=idx)
        return graph.op("relu", graph.op("add", graph.op("matmul", cols, w), b))

    def log_probs(self, graph: Graph, clip: VideoClip, nodes=None) -> Node:
        p = nodes if nodes is not None else self._bind(graph)
        feats = self.frontend.build(graph, clip, nodes=p)
        h = self._temporal_conv(graph, feats, p["wc.conv1.w"], p["wc.conv1.b"])
        h = self._temporal_conv(graph, h, p["wc.conv2.w"], p["wc.conv2.b"])
        pooled = graph.op("reshape", graph.op("mean_axis", h, axis=0), shape=(1, h.shape[1]))
        logits = graph.op("add", graph.op("matmul", pooled, p["wc.out.w"]), p["wc.out.b"])
        return graph.op("log_softmax_last", logits)

    def _bind(self, graph):
        out = self.frontend.params.bind(graph)
        out.update(self.params.bind(graph))
        return out

    def classify(self, clip: VideoClip) -> str:
        graph = Graph()
        lp = self.log_probs(graph, clip)
        return self.words[int(lp.value[0].argmax())]


def pretrain_word_classifier(
    frontend: VisualFrontend,
    word_utts: list[Utterance],
    epochs: int = 5,
    seed: int = 0,
    learning_rate: float = 1e-3,
    augment: AugmentConfig | None = None,
    log=None,
) -> tuple[WordClassifier, list[float]]:
    """Stage-one training; returns the classifier (front-end trained in place)
    and the per-epoch training accuracy history."""
    words = sorted({u.transcript for u in word_utts})
    clf = WordClassifier(frontend, words, rng=np.random.default_rng(np.random.SeedSequence([seed, 0xC1])))
    adam = AdamState(learning_rate=learning_rate)
    accs = []
    for epoch in range(epochs):
        rng = _epoch_rng(seed, epoch, salt=1)
        order = rng.permutation(len(word_utts))
        hits = 0
        for j in order:
            u = word_utts[int(j)]
            clip = u.video
            if augment is not None:
                clip = augment_visual(clip, rng, augment)
            graph = Graph()
            lp = clf.log_probs(graph, clip)
            label = clf.word_index[u.transcript]
            if int(lp.value[0].argmax()) == label:
                hits += 1
            loss = graph.op("scale", graph.op("take_flat", lp, idx=np.array([label])), factor=-1.0)
            grads = graph.backward(loss)
            merged = {}
            merged.update(clf.frontend.params.arrays)
            merged.update(clf.params.arrays)
            new = adam_step(adam, merged, grads)
            for name in clf.frontend.params.arrays:
                clf.frontend.params.arrays[name] = new[name]
            for name in clf.params.arrays:
                clf.params.arrays[name] = new[name]
        accs.append(hits / len(word_utts))
        if log:
            log(f"pretrain epoch {epoch}: train acc {accs[-1]:.3f}")
    return clf, accs


def extract_frozen_features(frontend: VisualFrontend, utterances: list[Utterance]) -> list[Utterance]:
    """Stage two: replace pixel clips by extracted features (deterministic)."""
    out = []
    for u in utterances:
        if isinstance(u.video, np.ndarray):
            out.append(u)
        else:
            out.append(replace(u, video=frontend.extract(u.video)))
    return out


def fine_tune_on_shifts(
    trainer: SequenceTrainer,
    utterances: list[Utterance],
    max_shift: int = 4,
    epochs: int = 1,
    seed: int = 0,
) -> None:
    """Out-of-sync calibration: each pass trains on randomly shifted video."""
    for epoch in range(epochs):
        rng = _epoch_rng(seed, epoch, salt=2)
        shifted = []
        for u in utterances:
            k = int(rng.integers(-max_shift, max_shift + 1))
            shifted.append(desync(u, k) if k else u)
        trainer.run(shifted, val_utts=None, epochs=1)
