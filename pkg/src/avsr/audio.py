"""Audio feature extraction: short-time spectral magnitudes and 4-frame grouping.

A 40 ms window with a 10 ms hop at 16 kHz gives 640-sample frames, 160-sample
hops and 321 magnitude bins (bin spacing 25 Hz). Four consecutive spectral
frames are concatenated so one grouped row covers 40 ms, matching the 25 fps
video frame rate one-to-one.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import DataError, InsufficientAudioError

DEFAULT_SAMPLE_RATE = 16000
WINDOW_MS = 40
HOP_MS = 10
GROUP = 4
STFT_WINDOW = "hann"  # recorded choice; periodic form


@dataclass
class Waveform:
    """Mono samples in [-1, 1] at a fixed rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    """frames: [num_audio_frames x (window/2 + 1)] non-negative magnitudes."""

    frames: np.ndarray


def _window_hop_samples(sample_rate: int, window_ms: int, hop_ms: int) -> tuple[int, int]:
    win = sample_rate * window_ms
    hop = sample_rate * hop_ms
    if win % 1000 or hop % 1000:
        raise DataError(f"window/hop of {window_ms}/{hop_ms} ms are not integer sample counts at {sample_rate} Hz")
    return win // 1000, hop // 1000


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length n."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitudes(w: Waveform, window_ms: int = WINDOW_MS, hop_ms: int = HOP_MS) -> Spectrogram:
    """Magnitude spectrogram; frame count is floor((len - win)/hop) + 1."""
    win, hop = _window_hop_samples(w.sample_rate, window_ms, hop_ms)
    n = len(w.samples)
    if n < win:
        raise InsufficientAudioError(f"waveform of {n} samples is shorter than one {win}-sample window")
    count = (n - win) // hop + 1
    taper = hann_window(win)
    idx = np.arange(win)[None, :] + hop * np.arange(count)[:, None]
    frames = w.samples[idx] * taper
    mags = np.abs(np.fft.rfft(frames, axis=1))
    return Spectrogram(frames=mags)


def group_audio_frames(s: Spectrogram, group: int = GROUP) -> np.ndarray:
    """Concatenate frames in groups of `group`, zero-padding the last group.

    [F x B] -> [ceil(F/group) x group*B]; output rows align with 25 fps video.
    """
    frames = np.asarray(s.frames, dtype=np.float64)
    n_frames, bins = frames.shape
    if n_frames < 1:
        raise DataError("cannot group an empty spectrogram")
    rows = -(-n_frames // group)
    padded = np.zeros((rows * group, bins))
    padded[:n_frames] = frames
    return padded.reshape(rows, group * bins)


def ungroup_audio_frames(grouped: np.ndarray, bins: int, n_frames: int) -> np.ndarray:
    """Inverse of group_audio_frames, dropping the zero padding."""
    rows, width = grouped.shape
    if width % bins:
        raise DataError(f"grouped width {width} is not a multiple of {bins} bins")
    return grouped.reshape(rows * (width // bins), bins)[:n_frames]


# ---------------------------------------------------------------------------
# PCM file interface
# ---------------------------------------------------------------------------


def save_wav(path, w: Waveform) -> None:
    """Write mono 16-bit little-endian PCM."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())


def load_wav(path, expect_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read mono 16-bit PCM, rejecting unexpected rates or layouts."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise DataError(f"{path}: expected mono audio, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise DataError(f"{path}: expected 16-bit samples, got {8 * f.getsampwidth()}-bit")
        rate = f.getframerate()
        if rate != expect_rate:
            raise DataError(f"{path}: sample rate {rate} Hz, expected {expect_rate} Hz")
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(samples=samples, sample_rate=rate)
