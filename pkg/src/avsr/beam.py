"""Beam-search inference for both architectures, the exact CTC oracle, and
test-time augmentation.

Sequence decoding scores hypotheses as (log p(y|x) + alpha * log p_LM(y)) / LP(y)
with LP(y) = ((5+|y|)/6)^beta. The frame-wise decoder implements the prefix
beam search with blank/non-blank bookkeeping: a blank or a repeated character
extends the probability of the same prefix, a new character extends the
prefix, and a character equal to the last one may only follow paths that end
in blank. Ties break lexicographically on the token sequence everywhere so
oracle comparisons are deterministic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import inf, log

import numpy as np

from .errors import ConfigError, DataError, NumericError

NEG_INF = -inf

MAX_DECODE_CHARS = 100  # transcripts are clipped to 100 characters

# Validated defaults: (width, lm weight, length penalty exponent)
SEQ2SEQ_DEFAULTS = {"plain": (6, 0.0, 0.6), "fused": (35, 0.1, 0.7)}
CTC_DEFAULTS = {"plain": (100, 0.0, 0.1), "fused": (100, 0.5, 0.1)}


@dataclass
class BeamConfig:
    width: int = 6
    lm_weight: float = 0.0
    length_penalty: float = 0.0
    mode: str = "seq2seq"

    def __post_init__(self):
        if self.width < 1:
            raise ConfigError(f"beam width must be >= 1, got {self.width}")
        if self.lm_weight < 0:
            raise ConfigError(f"lm weight must be >= 0, got {self.lm_weight}")
        if self.mode not in ("seq2seq", "ctc"):
            raise ConfigError(f"unknown beam mode {self.mode!r}")

    @staticmethod
    def seq2seq(with_lm: bool = False) -> "BeamConfig":
        w, a, b = SEQ2SEQ_DEFAULTS["fused" if with_lm else "plain"]
        return BeamConfig(width=w, lm_weight=a, length_penalty=b, mode="seq2seq")

    @staticmethod
    def ctc(with_lm: bool = False) -> "BeamConfig":
        w, a, b = CTC_DEFAULTS["fused" if with_lm else "plain"]
        return BeamConfig(width=w, lm_weight=a, length_penalty=b, mode="ctc")


@dataclass
class Hypothesis:
    """Partial decode: token ids, model/LM log-probabilities, LM state.

    The frame-wise search additionally tracks log-probabilities of ending in
    blank (p_b) and non-blank (p_nb); the prefix total is their log-sum.
    """

    tokens: tuple[int, ...] = ()
    log_model: float = 0.0
    log_lm: float = 0.0
    lm_state: object = None
    p_b: float = NEG_INF
    p_nb: float = NEG_INF

    @property
    def total(self) -> float:
        return np.logaddexp(self.p_b, self.p_nb)


def length_penalty(n_tokens: int, beta: float) -> float:
    """((5+|y|)/6)^beta; equals 1 at |y| = 1 for any beta."""
    return ((5.0 + n_tokens) / 6.0) ** beta


def _lm_score(lm, state, symbol_id: int, id_to_symbol) -> tuple[float, object]:
    """Fusion lookup; symbols outside the LM alphabet score -inf without
    touching the LM (its own contract rejects unknowns loudly)."""
    sym = id_to_symbol(symbol_id)
    if not lm.knows(sym):
        return NEG_INF, state
    return lm.score(state, sym)


# ---------------------------------------------------------------------------
# sequence decoder
# ---------------------------------------------------------------------------


def seq2seq_beam(model, encs, lm=None, cfg: BeamConfig | None = None, max_len: int = MAX_DECODE_CHARS):
    """Left-to-right beam search over the autoregressive decoder.

    `encs` is one EncoderOutput or a list of them (logits are ensemble-averaged
    across the list). Returns (text, normalized score).
    """
    cfg = cfg or BeamConfig.seq2seq(with_lm=lm is not None)
    if cfg.mode != "seq2seq":
        raise ConfigError(f"seq2seq_beam called with mode {cfg.mode!r}")
    if not isinstance(encs, (list, tuple)):
        encs = [encs]
    if not encs or not encs[0].available:
        raise DataError("seq2seq_beam: empty encoder output")
    vocab = model.vocab
    alpha, beta = cfg.lm_weight, cfg.length_penalty
    use_lm = lm is not None and alpha > 0

    def norm(log_p: float, n: int) -> float:
        return log_p / length_penalty(n, beta)

    live = [Hypothesis(lm_state=lm.initial_state() if use_lm else None)]
    finished: list[tuple[float, tuple[int, ...]]] = []

    for _ in range(max_len + 1):
        if not live:
            break
        # every extension (end token included) competes for the W beam slots
        scored: list[tuple[float, tuple[int, ...], bool, Hypothesis]] = []
        for hyp in live:
            logp = model.step_log_probs(encs, hyp.tokens)
            for sym in range(vocab.size):
                if sym == vocab.pad_id:
                    continue
                lm_add, lm_state = 0.0, hyp.lm_state
                if use_lm:
                    from .lm import EOS_MARK

                    lm_add, lm_state = _lm_score(
                        lm, hyp.lm_state, sym, lambda s: EOS_MARK if s == vocab.eos_id else vocab.symbols[s]
                    )
                    if lm_add == NEG_INF:
                        continue
                if sym == vocab.eos_id:
                    score = norm(hyp.log_model + logp[sym] + alpha * (hyp.log_lm + lm_add), len(hyp.tokens))
                    scored.append((score, hyp.tokens, True, hyp))
                else:
                    ext = Hypothesis(
                        tokens=hyp.tokens + (sym,),
                        log_model=hyp.log_model + logp[sym],
                        log_lm=hyp.log_lm + lm_add,
                        lm_state=lm_state,
                    )
                    score = norm(ext.log_model + alpha * ext.log_lm, len(ext.tokens))
                    scored.append((score, ext.tokens, False, ext))
        scored.sort(key=lambda item: (-item[0], item[1]))
        live = []
        for score, tokens, is_end, hyp in scored[: cfg.width]:
            if is_end:
                finished.append((score, tokens))
            else:
                live.append(hyp)
        if finished and live:
            best_finished = max(s for s, _ in finished)
            # a numerator can only fall; the penalty at max_len is its most generous
            optimistic = max(
                norm(live[0].log_model + alpha * live[0].log_lm, max_len),
                norm(live[0].log_model + alpha * live[0].log_lm, len(live[0].tokens)),
            )
            if optimistic < best_finished:
                break
        if live and len(live[0].tokens) >= max_len:
            for hyp in live:
                finished.append((norm(hyp.log_model + alpha * hyp.log_lm, len(hyp.tokens)), hyp.tokens))
            break

    if not finished:
        raise DataError("seq2seq_beam: no hypothesis finished")
    finished.sort(key=lambda item: (-item[0], item[1]))
    score, tokens = finished[0]
    return vocab.decode(tokens), score


# ---------------------------------------------------------------------------
# frame-wise decoder
# ---------------------------------------------------------------------------


def _check_frames_normalized(post: np.ndarray, tol: float = 1e-6) -> None:
    sums = post.sum(axis=1)
    bad = np.abs(sums - 1.0) > tol
    if bad.any():
        t = int(np.argmax(bad))
        raise NumericError(f"frame {t} distribution sums to {sums[t]:.9f}, not 1 within {tol}")


def _prefix_norm(total: float, n: int, beta: float) -> float:
    # |s|^beta is undefined at |s|=0; the empty prefix uses norm 1
    return total / (max(n, 1) ** beta)


def ctc_prefix_beam(posteriors: np.ndarray, lm=None, cfg: BeamConfig | None = None, symbols=None):
    """Prefix beam search over per-frame distributions (last column = blank).

    Returns (tokens tuple, normalized log-prob score). `symbols` optionally
    maps column index -> character for LM fusion lookups.
    """
    cfg = cfg or BeamConfig.ctc(with_lm=lm is not None)
    if cfg.mode != "ctc":
        raise ConfigError(f"ctc_prefix_beam called with mode {cfg.mode!r}")
    post = np.asarray(posteriors, dtype=np.float64)
    if post.ndim != 2 or post.shape[1] < 2:
        raise DataError(f"posteriors must be [T x (V+1)], got {post.shape}")
    _check_frames_normalized(post)
    t_len, k = post.shape
    blank = k - 1
    alpha, beta = cfg.lm_weight, cfg.length_penalty
    use_lm = lm is not None and alpha > 0
    with np.errstate(divide="ignore"):
        lp = np.log(post)

    p_b = {(): 0.0}
    p_nb = {(): NEG_INF}
    lm_states = {(): lm.initial_state() if use_lm else None}

    fusible = list(range(blank))
    if use_lm and symbols is not None:
        fusible = [c for c in range(blank) if lm.knows(symbols(c))]

    for t in range(t_len):
        row = lp[t]
        ranked = sorted(
            p_b,
            key=lambda s: (s != (), -_prefix_norm(np.logaddexp(p_b[s], p_nb[s]), len(s), beta), s),
        )
        beam = ranked[: cfg.width]
        new_b: dict[tuple, float] = {}
        new_nb: dict[tuple, float] = {}
        for s in beam:
            total = np.logaddexp(p_b[s], p_nb[s])
            # blank keeps the prefix
            acc = row[blank] + total
            new_b[s] = np.logaddexp(new_b[s], acc) if s in new_b else acc
            if s not in new_nb:
                new_nb[s] = NEG_INF
            # repeated character keeps the prefix (non-blank continuation)
            if s:
                acc = row[s[-1]] + p_nb[s]
                new_nb[s] = np.logaddexp(new_nb[s], acc)
            # extensions
            for c in fusible if use_lm else range(blank):
                lm_add = 0.0
                if use_lm:
                    s_plus_state = lm_states.get(s + (c,), None)
                    lm_add, new_state = lm.score(lm_states[s], symbols(c))
                    if s_plus_state is None:
                        lm_states[s + (c,)] = new_state
                base = p_b[s] if (s and c == s[-1]) else total
                if base == NEG_INF:
                    continue
                acc = row[c] + base + alpha * lm_add
                s_plus = s + (c,)
                new_nb[s_plus] = np.logaddexp(new_nb[s_plus], acc) if s_plus in new_nb else acc
                if s_plus not in new_b:
                    new_b[s_plus] = NEG_INF
        p_b, p_nb = new_b, new_nb

    scored = sorted(
        ((_prefix_norm(np.logaddexp(p_b[s], p_nb[s]), len(s), beta), s) for s in p_b),
        key=lambda item: (-item[0], item[1]),
    )
    score, tokens = scored[0]
    return tokens, float(score)


def exact_ctc_decode(posteriors: np.ndarray) -> tuple[int, ...]:
    """Maximum-marginal transcript by exhaustive path enumeration.

    Enumerates all (V+1)^T paths, collapses (merge repeats, drop blanks) and
    sums probability per output string. Guarded to T <= 8 and V <= 4.
    """
    post = np.asarray(posteriors, dtype=np.float64)
    t_len, k = post.shape
    v = k - 1
    if t_len > 8 or v > 4:
        raise DataError(f"exact_ctc_decode guard: T={t_len} (max 8), V={v} (max 4)")
    _check_frames_normalized(post)
    blank = v

    n_paths = k ** t_len
    codes = np.zeros(n_paths, dtype=np.int64)  # collapsed string encoded base v+1
    probs = np.ones(n_paths)
    prev = np.full(n_paths, -1, dtype=np.int64)
    for t in range(t_len):
        reps = k ** (t_len - t - 1)
        sym = np.tile(np.repeat(np.arange(k), reps), k ** t)
        probs *= post[t, sym]
        emit = (sym != blank) & (sym != prev)
        codes = np.where(emit, codes * (v + 1) + (sym + 1), codes)
        prev = sym

    best_prob = -1.0
    best: tuple[int, ...] | None = None
    uniq, inv = np.unique(codes, return_inverse=True)
    mass = np.zeros(len(uniq))
    np.add.at(mass, inv, probs)
    for code, p in zip(uniq, mass):
        seq = _decode_code(int(code), v + 1)
        if p > best_prob or (p == best_prob and seq < best):
            best_prob, best = p, seq
    return best


def _decode_code(code: int, base: int) -> tuple[int, ...]:
    out = []
    while code:
        out.append(code % base - 1)
        code //= base
    return tuple(reversed(out))


# ---------------------------------------------------------------------------
# utterance-level decoding and test-time augmentation
# ---------------------------------------------------------------------------


def _random_transform(rng) -> tuple[bool, int, int]:
    return bool(rng.random() < 0.5), int(rng.integers(-5, 6)), int(rng.integers(-5, 6))


def _apply_transform(frames: np.ndarray, flip: bool, dy: int, dx: int) -> np.ndarray:
    from .corpus import flip_horizontal, spatial_shift

    out = flip_horizontal(frames) if flip else frames
    if dy or dx:
        out = spatial_shift(out, dy, dx)
    return out


def decode_utterance(model, u, lm=None, cfg: BeamConfig | None = None, frontend=None, modalities=None, max_len: int = MAX_DECODE_CHARS):
    """Plain beam decode of one utterance; returns (text, score)."""
    from .corpus import utterance_features

    modalities = modalities or model.modalities
    feats = utterance_features(u, modalities, frontend)
    if hasattr(model, "step_log_probs"):
        enc = model.encode_arrays({m: feats[m] for m in modalities})
        return seq2seq_beam(model, enc, lm=lm, cfg=cfg, max_len=max_len)
    post = np.exp(model.log_posteriors({m: feats[m] for m in modalities}))
    tokens, score = ctc_prefix_beam(post, lm=lm, cfg=cfg, symbols=lambda c: model.vocab.symbols[c])
    return model.vocab.decode(tokens), score


def tta_decode(
    model,
    u,
    lm=None,
    cfg: BeamConfig | None = None,
    frontend=None,
    modalities=None,
    n_transforms: int = 9,
    rng=None,
    max_len: int = MAX_DECODE_CHARS,
):
    """Test-time augmentation: n random flip/shift transforms of the visual
    input plus the original.

    The autoregressive decoder averages per-step logits across the passes;
    the frame-wise decoder averages the visual features and decodes once.
    With n_transforms=0 this is exactly the plain decode.
    """
    from .corpus import utterance_features
    from .video import VideoClip

    modalities = modalities or model.modalities
    if n_transforms == 0 or "video" not in modalities or isinstance(u.video, np.ndarray):
        return decode_utterance(model, u, lm=lm, cfg=cfg, frontend=frontend, modalities=modalities, max_len=max_len)
    if frontend is None:
        raise ConfigError("test-time augmentation needs the visual front-end")
    if rng is None:
        rng = np.random.default_rng(0)
    clips = [u.video.frames]
    for _ in range(n_transforms):
        clips.append(_apply_transform(u.video.frames, *_random_transform(rng)))
    feats = utterance_features(u, modalities, frontend)
    vis = [frontend.extract(VideoClip(frames=c)) for c in clips]
    if hasattr(model, "step_log_probs"):
        encs = []
        for v in vis:
            f = dict(feats)
            f["video"] = v
            encs.append(model.encode_arrays({m: f[m] for m in modalities}))
        return seq2seq_beam(model, encs, lm=lm, cfg=cfg, max_len=max_len)
    f = dict(feats)
    f["video"] = np.mean(vis, axis=0)
    post = np.exp(model.log_posteriors({m: f[m] for m in modalities}))
    tokens, score = ctc_prefix_beam(post, lm=lm, cfg=cfg, symbols=lambda c: model.vocab.symbols[c])
    return model.vocab.decode(tokens), score


# ---------------------------------------------------------------------------
# posterior interchange format: u32 frame count, u32 vocab columns, payload
# ---------------------------------------------------------------------------

_POST_HEADER = struct.Struct("<II")


def save_posteriors(path, posteriors: np.ndarray) -> None:
    post = np.ascontiguousarray(posteriors, dtype="<f8")
    with open(path, "wb") as f:
        f.write(_POST_HEADER.pack(post.shape[0], post.shape[1]))
        f.write(post.tobytes())


def load_posteriors(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(_POST_HEADER.size)
        if len(head) != _POST_HEADER.size:
            raise DataError(f"{path}: truncated posterior header")
        frames, cols = _POST_HEADER.unpack(head)
        payload = f.read()
    expect = frames * cols * 8
    if len(payload) != expect:
        raise DataError(f"{path}: expected {expect} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(frames, cols).astype(np.float64)
