"""Plain-text key=value run configuration.

One flat namespace covers model, corpus, training and decoding settings so a
whole experiment is reproducible from (config file, seed). Unknown keys are
rejected outright; every default is visible in `RunConfig()` and the annotated
example config shipped in configs/.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .transformer import ModelConfig


@dataclass
class RunConfig:
    # reproducibility
    seed: int = 0

    # model
    arch: str = "seq2seq"  # seq2seq | ctc
    modalities: str = "av"  # av | a | v
    d_model: int = 64
    heads: int = 4
    ff_hidden: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    ctc_layers: int = 2
    dropout: float = 0.1
    label_smoothing: float = 0.1

    # corpus
    corpus_dir: str = "corpus"
    alphabet: str = "abcdefgh"
    n_utterances: int = 200
    lexicon_size: int = 12
    words_min: int = 2
    words_max: int = 5
    word_len_min: int = 2
    word_len_max: int = 4
    video_mode: str = "features"
    d_vis: int = 32
    image_size: int = 32
    feature_jitter: float = 0.1
    pixel_jitter: float = 0.05
    audio_amplitude: float = 0.3
    tone_overrides: str = ""  # "a=300,b=300" shares tones between characters
    holdout_fraction: float = 0.2

    # training
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-4
    lr_floor: float = 1e-6
    lr_patience: int = 2
    curriculum: str = "word,8,16,32,64,full"
    stage_epochs: int = 0  # 0 = advance stages on train-loss plateau
    noise_p: float = 0.25
    noise_snr_db: float = 0.0
    always_noise: bool = False
    stages: str = "frozen"  # comma subset of pretrain,frozen,e2e
    pretrain_epochs: int = 5
    e2e_epochs: int = 2
    val_fraction: float = 0.1

    # decoding
    beam_width: int = 0  # 0 = per-architecture default
    lm_weight: float = -1.0  # negative = per-architecture default
    length_penalty: float = -1.0  # negative = per-architecture default
    lm_path: str = ""
    use_lm: bool = False
    tta: int = 0

    # sweeps
    sweep_grid: str = "-4,-3,-2,-1,0,1,2,3,4"
    fine_tune_epochs: int = 0

    def __post_init__(self):
        if self.arch not in ("seq2seq", "ctc"):
            raise ConfigError(f"arch must be seq2seq or ctc, got {self.arch!r}")
        if self.modalities not in ("av", "a", "v"):
            raise ConfigError(f"modalities must be av, a or v, got {self.modalities!r}")
        if not (0 <= self.holdout_fraction < 1):
            raise ConfigError(f"holdout_fraction must be in [0,1), got {self.holdout_fraction}")

    # -- derived views ------------------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            heads=self.heads,
            ff_hidden=self.ff_hidden,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            ctc_layers=self.ctc_layers,
            dropout=self.dropout,
            label_smoothing=self.label_smoothing,
            d_vis=self.d_vis,
        )

    def modality_tuple(self) -> tuple[str, ...]:
        return {"av": ("video", "audio"), "a": ("audio",), "v": ("video",)}[self.modalities]

    def corpus_spec(self):
        from .corpus import CorpusSpec

        overrides = {}
        if self.tone_overrides:
            for item in self.tone_overrides.split(","):
                ch, _, hz = item.partition("=")
                if not hz:
                    raise ConfigError(f"bad tone override {item!r}, expected char=hz")
                overrides[ch] = float(hz)
        return CorpusSpec(
            alphabet=self.alphabet,
            n_utterances=self.n_utterances,
            lexicon_size=self.lexicon_size,
            words_min=self.words_min,
            words_max=self.words_max,
            word_len_min=self.word_len_min,
            word_len_max=self.word_len_max,
            video_mode=self.video_mode,
            d_vis=self.d_vis,
            image_size=self.image_size,
            feature_jitter=self.feature_jitter,
            pixel_jitter=self.pixel_jitter,
            audio_amplitude=self.audio_amplitude,
            tone_overrides=overrides,
        )

    def curriculum_schedule(self) -> tuple:
        out = []
        for item in self.curriculum.split(","):
            item = item.strip()
            if not item:
                continue
            out.append(item if item in ("word", "full") else int(item))
        if not out:
            raise ConfigError("curriculum schedule is empty")
        return tuple(out)

    def stage_list(self) -> list[str]:
        out = [s.strip() for s in self.stages.split(",") if s.strip()]
        bad = [s for s in out if s not in ("pretrain", "frozen", "e2e")]
        if bad:
            raise ConfigError(f"unknown training stages {bad!r}")
        return out

    def to_dict(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, text: str):
    kind = _FIELDS[name]
    if kind == "bool":
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: cannot parse {text!r} as a boolean")
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r} as {kind}") from exc
    return text


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """key=value lines with # comments; unknown keys are fatal."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = body.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    for key, val in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown override key {key!r}")
        values[key] = _coerce(key, str(val)) if isinstance(val, str) else val
    return RunConfig(**values)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), overrides)
