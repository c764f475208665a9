"""Deterministic synthetic audio-visual corpus.

Every character renders as three 25 fps video frames (120 ms) and 1920 audio
samples of a pure tone whose frequency is a per-character table entry
(default 200 + 50 * symbol-index Hz, two spectral bins apart). The visual
channel renders a per-character seeded prototype (a feature vector or a small
image) with per-frame jitter, so audio is deliberately the easier modality
and noise injection has something to balance. Spaces render as silence plus
a neutral prototype. Everything is a pure function of (spec, seed): utterance
rngs are split from the corpus seed, so regeneration is bit-identical.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, Waveform, group_audio_frames, stft_magnitudes
from .errors import ConfigError, DataError
from .video import VideoClip
from .vocab import BASE_SYMBOLS, SPACE

FRAMES_PER_CHAR = 3
SAMPLES_PER_CHAR = 1920  # 120 ms at 16 kHz = 3 video frames at 25 fps
MAX_TRANSCRIPT_CHARS = 100
BABBLE_POOL_MIN = 20
NYQUIST = DEFAULT_SAMPLE_RATE / 2
TRAIN_NOISE_P = 0.25  # training-time babble injection probability


@dataclass
class CorpusSpec:
    """Generation parameters; the character tone/prototype tables are seeded."""

    alphabet: str = "abcdefgh"
    n_utterances: int = 200
    lexicon_size: int = 12
    words_min: int = 2
    words_max: int = 5
    word_len_min: int = 2
    word_len_max: int = 4
    video_mode: str = "features"  # "features" (pre-extracted) or "pixels"
    d_vis: int = 32
    image_size: int = 32
    feature_jitter: float = 0.1
    pixel_jitter: float = 0.05
    audio_amplitude: float = 0.3
    tone_base: float = 200.0
    tone_step: float = 50.0
    tone_overrides: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.alphabet:
            raise ConfigError("corpus alphabet must not be empty")
        if self.video_mode not in ("features", "pixels"):
            raise ConfigError(f"unknown video mode {self.video_mode!r}")
        bad = [c for c in self.alphabet if c == SPACE or c not in BASE_SYMBOLS]
        if bad:
            raise ConfigError(f"alphabet characters {bad!r} are not plain vocabulary symbols")
        for c in self.alphabet:
            f = self.tone(c)
            if not (0 < f < NYQUIST):
                raise ConfigError(f"tone for {c!r} is {f} Hz, outside (0, {NYQUIST})")

    def tone(self, c: str) -> float:
        if c in self.tone_overrides:
            return self.tone_overrides[c]
        return self.tone_base + self.tone_step * BASE_SYMBOLS.index(c)


@dataclass
class Utterance:
    """One paired sample: transcript, waveform and video (clip or features)."""

    uid: str
    transcript: str
    waveform: Waveform
    video: VideoClip | np.ndarray
    seed: int

    @property
    def video_features(self) -> np.ndarray | None:
        return self.video if isinstance(self.video, np.ndarray) else None

    @property
    def n_frames(self) -> int:
        if isinstance(self.video, np.ndarray):
            return self.video.shape[0]
        return self.video.frames.shape[0]


def _smooth_pattern(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency seeded texture in [0.2, 0.8]; stays recognizable under
    the small spatial shifts used by augmentation and test-time transforms."""
    y, x = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size))
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 2.5, 2)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (fx * x + fy * y) + phase)
    img = (img - img.min()) / (img.max() - img.min())
    return (0.2 + 0.6 * img)[..., None]


class PrototypeTable:
    """Seeded per-character visual prototypes; space maps to the neutral one."""

    def __init__(self, spec: CorpusSpec, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF0]))
        self.spec = spec
        self.by_char = {}
        for c in spec.alphabet:
            if spec.video_mode == "features":
                self.by_char[c] = rng.normal(0.0, 1.0, spec.d_vis)
            else:
                self.by_char[c] = _smooth_pattern(rng, spec.image_size)
        if spec.video_mode == "features":
            self.by_char[SPACE] = np.zeros(spec.d_vis)
        else:
            self.by_char[SPACE] = np.full((spec.image_size, spec.image_size, 1), 0.5)

    def render(self, transcript: str, rng: np.random.Generator):
        spec = self.spec
        frames = []
        for c in transcript:
            proto = self.by_char[c]
            for _ in range(FRAMES_PER_CHAR):
                if spec.video_mode == "features":
                    frames.append(proto + spec.feature_jitter * rng.normal(0.0, 1.0, proto.shape))
                else:
                    noisy = proto + spec.pixel_jitter * rng.normal(0.0, 1.0, proto.shape)
                    frames.append(np.clip(noisy, 0.0, 1.0))
        stacked = np.stack(frames)
        return stacked if spec.video_mode == "features" else VideoClip(frames=stacked)


def render_audio(spec: CorpusSpec, transcript: str) -> Waveform:
    segs = []
    t = np.arange(SAMPLES_PER_CHAR) / DEFAULT_SAMPLE_RATE
    for c in transcript:
        if c == SPACE:
            segs.append(np.zeros(SAMPLES_PER_CHAR))
        else:
            segs.append(spec.audio_amplitude * np.sin(2.0 * np.pi * spec.tone(c) * t))
    return Waveform(samples=np.concatenate(segs))


def _utterance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def make_lexicon(spec: CorpusSpec, seed: int) -> list[str]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1E]))
    chars = list(spec.alphabet)
    words: list[str] = []
    attempts = 0
    while len(words) < spec.lexicon_size and attempts < 1000:
        attempts += 1
        n = int(rng.integers(spec.word_len_min, spec.word_len_max + 1))
        w = "".join(rng.choice(chars) for _ in range(n))
        if w not in words:
            words.append(w)
    if len(words) < spec.lexicon_size:
        raise ConfigError("alphabet too small for the requested lexicon size")
    return words


def render_utterance(spec: CorpusSpec, protos: PrototypeTable, uid: str, transcript: str, seed: int, index: int) -> Utterance:
    if len(transcript) > MAX_TRANSCRIPT_CHARS:
        raise DataError(f"transcript of {len(transcript)} characters exceeds the {MAX_TRANSCRIPT_CHARS}-character cap")
    rng = _utterance_rng(seed, index)
    return Utterance(
        uid=uid,
        transcript=transcript,
        waveform=render_audio(spec, transcript),
        video=protos.render(transcript, rng),
        seed=seed,
    )


def generate(spec: CorpusSpec, seed: int) -> list[Utterance]:
    """Deterministic corpus: same (spec, seed) yields bit-identical utterances."""
    lexicon = make_lexicon(spec, seed)
    protos = PrototypeTable(spec, seed)
    out = []
    for i in range(spec.n_utterances):
        rng = _utterance_rng(seed, 0x5E000000 + i)
        n_words = int(rng.integers(spec.words_min, spec.words_max + 1))
        words = [lexicon[int(rng.integers(len(lexicon)))] for _ in range(n_words)]
        transcript = " ".join(words)
        out.append(render_utterance(spec, protos, f"utt{i:05d}", transcript, seed, i))
    return out


# ---------------------------------------------------------------------------
# feature assembly
# ---------------------------------------------------------------------------


def utterance_features(u: Utterance, modalities=("video", "audio"), frontend=None, waveform: Waveform | None = None):
    """Grouped audio spectra and per-frame visual features for one utterance.

    Pixel-mode clips go through the supplied visual front-end; feature-mode
    videos pass through unchanged. Audio may be overridden (noise mixing).
    Audio magnitudes are log-compressed so encoder inputs sit at unit scale.
    """
    feats: dict[str, np.ndarray | None] = {"video": None, "audio": None}
    if "audio" in modalities:
        w = waveform if waveform is not None else u.waveform
        feats["audio"] = np.log1p(group_audio_frames(stft_magnitudes(w)))
    if "video" in modalities:
        if isinstance(u.video, np.ndarray):
            feats["video"] = u.video
        else:
            if frontend is None:
                raise ConfigError("pixel-mode video needs a visual front-end")
            feats["video"] = frontend.extract(u.video)
    return feats


# ---------------------------------------------------------------------------
# babble noise
# ---------------------------------------------------------------------------


def make_babble(pool: list[Waveform], length: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-power babble: 20 pool waveforms looped/cropped to length and summed."""
    if len(pool) < BABBLE_POOL_MIN:
        raise DataError(f"babble needs a pool of >= {BABBLE_POOL_MIN} waveforms, got {len(pool)}")
    picks = rng.choice(len(pool), size=BABBLE_POOL_MIN, replace=False)
    acc = np.zeros(length)
    for j in picks:
        s = pool[int(j)].samples
        reps = -(-length // len(s))
        acc += np.tile(s, reps)[:length]
    power = float(np.mean(acc**2))
    if power == 0:
        raise DataError("babble pool summed to silence")
    return acc / np.sqrt(power)


def mix_babble(u: Utterance, snr_db: float, pool: list[Waveform], rng: np.random.Generator) -> Utterance:
    """Add babble at the requested SNR. snr_db=inf is the no-noise sentinel.

    If the mixture would leave [-1, 1] the whole mixture is rescaled, which
    preserves the signal-to-noise ratio exactly.
    """
    if snr_db == np.inf:
        return u
    clean = u.waveform.samples
    p_signal = float(np.mean(clean**2))
    if p_signal == 0:
        raise DataError("SNR is undefined for a silent signal")
    babble = make_babble(pool, len(clean), rng)
    noise = babble * np.sqrt(p_signal / (10.0 ** (snr_db / 10.0)))
    mixed = clean + noise
    peak = float(np.max(np.abs(mixed)))
    if peak > 1.0:
        mixed = mixed / peak
    return replace(u, waveform=Waveform(samples=mixed, sample_rate=u.waveform.sample_rate))


# ---------------------------------------------------------------------------
# desynchronization
# ---------------------------------------------------------------------------


def desync(u: Utterance, shift_frames: int) -> Utterance:
    """Shift video frames relative to audio; vacated frames edge-replicate.

    Transcript and audio are returned untouched (same arrays)."""
    t = u.n_frames
    if abs(shift_frames) >= t:
        raise DataError(f"shift of {shift_frames} frames exceeds clip length {t}")
    idx = np.clip(np.arange(t) - shift_frames, 0, t - 1)
    if isinstance(u.video, np.ndarray):
        video = u.video[idx]
    else:
        video = VideoClip(frames=u.video.frames[idx], frame_rate=u.video.frame_rate)
    return replace(u, video=video)


# ---------------------------------------------------------------------------
# curriculum
# ---------------------------------------------------------------------------

WORD_STAGE = "word"
FULL_STAGE = "full"
DEFAULT_SCHEDULE: tuple = (WORD_STAGE, 8, 16, 32, 64, FULL_STAGE)


def word_excerpts(u: Utterance) -> list[Utterance]:
    """Single-word cuts: char span -> 3x frames of video, 1920x samples of audio."""
    out = []
    start = 0
    pieces = u.transcript.split(" ")
    for w_i, w in enumerate(pieces):
        if w:
            a, b = start, start + len(w)
            wav = Waveform(samples=u.waveform.samples[a * SAMPLES_PER_CHAR : b * SAMPLES_PER_CHAR])
            if isinstance(u.video, np.ndarray):
                vid = u.video[a * FRAMES_PER_CHAR : b * FRAMES_PER_CHAR]
            else:
                vid = VideoClip(frames=u.video.frames[a * FRAMES_PER_CHAR : b * FRAMES_PER_CHAR])
            out.append(Utterance(uid=f"{u.uid}.w{w_i}", transcript=w, waveform=wav, video=vid, seed=u.seed))
        start += len(w) + 1
    return out


class CurriculumPolicy:
    """epoch/stage -> training pool and zero-pad cap.

    Stage 0 trains on single-word excerpts; each later stage raises the
    padded maximum transcript length until full sentences pass through.
    The schedule must be non-decreasing.
    """

    def __init__(self, schedule=DEFAULT_SCHEDULE):
        caps = [c for c in schedule if isinstance(c, int)]
        if caps != sorted(caps):
            raise ConfigError(f"curriculum caps must be non-decreasing, got {schedule!r}")
        self.schedule = tuple(schedule)

    @property
    def n_stages(self) -> int:
        return len(self.schedule)

    def pool(self, stage: int, utterances: list[Utterance]) -> list[Utterance]:
        cap = self.schedule[min(stage, self.n_stages - 1)]
        if cap == WORD_STAGE:
            out = []
            for u in utterances:
                out.extend(word_excerpts(u))
            return out
        if cap == FULL_STAGE:
            return list(utterances)
        return [u for u in utterances if len(u.transcript) <= cap]

    def pad_cap(self, stage: int, pool: list[Utterance]) -> int:
        cap = self.schedule[min(stage, self.n_stages - 1)]
        if isinstance(cap, int):
            return cap
        return max((len(u.transcript) for u in pool), default=0)


# ---------------------------------------------------------------------------
# visual augmentation (training only)
# ---------------------------------------------------------------------------


@dataclass
class AugmentConfig:
    flip_p: float = 0.5
    frame_drop_p: float = 0.05
    max_spatial_shift: int = 5
    max_temporal_shift: int = 2


def flip_horizontal(frames: np.ndarray) -> np.ndarray:
    return frames[:, :, ::-1, :]


def spatial_shift(frames: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Edge-replicated spatial translation of [T,H,W,C] frames."""
    t, h, w, c = frames.shape
    iy = np.clip(np.arange(h) - dy, 0, h - 1)
    ix = np.clip(np.arange(w) - dx, 0, w - 1)
    return frames[:, iy][:, :, ix]


def temporal_shift(frames: np.ndarray, k: int) -> np.ndarray:
    t = frames.shape[0]
    idx = np.clip(np.arange(t) - k, 0, t - 1)
    return frames[idx]


def augment_visual(video, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()):
    """Random flip, frame removal, spatial and temporal shifts.

    Pixel clips get the full set; feature matrices only the temporal ones.
    All probabilities/ranges at zero is the identity."""
    is_features = isinstance(video, np.ndarray) and video.ndim == 2
    frames = video if is_features else video.frames
    if not is_features and cfg.flip_p > 0 and rng.random() < cfg.flip_p:
        frames = flip_horizontal(frames)
    if not is_features and cfg.max_spatial_shift > 0:
        dy = int(rng.integers(-cfg.max_spatial_shift, cfg.max_spatial_shift + 1))
        dx = int(rng.integers(-cfg.max_spatial_shift, cfg.max_spatial_shift + 1))
        if dy or dx:
            frames = spatial_shift(frames, dy, dx)
    if cfg.max_temporal_shift > 0:
        k = int(rng.integers(-cfg.max_temporal_shift, cfg.max_temporal_shift + 1))
        if k:
            frames = temporal_shift(frames, k)
    if cfg.frame_drop_p > 0:
        keep = rng.random(frames.shape[0]) >= cfg.frame_drop_p
        if not keep.any():
            keep[int(rng.integers(frames.shape[0]))] = True  # never drop everything
        frames = frames[keep]
    return frames if is_features else VideoClip(frames=frames)


# ---------------------------------------------------------------------------
# on-disk corpus: manifest + content-addressed blobs
# ---------------------------------------------------------------------------


def _blob_name(payload: bytes, ext: str) -> str:
    return hashlib.sha256(payload).hexdigest()[:24] + ext


def _write_array_blob(dirpath, arr: np.ndarray) -> str:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = np.array([arr.ndim, *arr.shape], dtype="<u4").tobytes()
    payload = head + arr.tobytes()
    name = _blob_name(payload, ".f64")
    (dirpath / name).write_bytes(payload)
    return name


def _read_array_blob(path) -> np.ndarray:
    raw = path.read_bytes()
    rank = int(np.frombuffer(raw[:4], dtype="<u4")[0])
    dims = np.frombuffer(raw[4 : 4 + 4 * rank], dtype="<u4").astype(int)
    return np.frombuffer(raw[4 + 4 * rank :], dtype="<f8").reshape(tuple(dims)).astype(np.float64)


def save_corpus(root, utterances: list[Utterance], splits: dict[str, str]) -> None:
    """Write manifest.tsv (id, transcript, seed, split, blob pointers) + blobs.

    Blobs are content-addressed raw float64 arrays so reloading is bit-exact.
    """
    root = Path(root)
    blobs = root / "blobs"
    blobs.mkdir(parents=True, exist_ok=True)
    lines = []
    for u in utterances:
        wav_name = _write_array_blob(blobs, u.waveform.samples)
        if isinstance(u.video, np.ndarray):
            vid_kind, vid_name = "features", _write_array_blob(blobs, u.video)
        else:
            vid_kind, vid_name = "pixels", _write_array_blob(blobs, u.video.frames)
        lines.append(f"{u.uid}\t{u.transcript}\t{u.seed}\t{splits.get(u.uid, 'train')}\t{wav_name}\t{vid_name}\t{vid_kind}")
    (root / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(root) -> tuple[list[Utterance], dict[str, str]]:
    root = Path(root)
    manifest = root / "manifest.tsv"
    if not manifest.exists():
        raise DataError(f"no corpus manifest at {manifest}")
    utterances, splits = [], {}
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            raise DataError(f"{manifest}:{lineno}: expected 7 tab-separated fields, got {len(parts)}")
        uid, transcript, seed, split, wav_name, vid_name, vid_kind = parts
        wav = Waveform(samples=_read_array_blob(root / "blobs" / wav_name))
        arr = _read_array_blob(root / "blobs" / vid_name)
        video = arr if vid_kind == "features" else VideoClip(frames=arr)
        utterances.append(Utterance(uid=uid, transcript=transcript, waveform=wav, video=video, seed=int(seed)))
        splits[uid] = split
    return utterances, splits
