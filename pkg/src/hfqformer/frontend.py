"""Audio frontend: WAV reading, log-mel spectrogram, a small stand-in encoder, and
seeded synthetic 50 Hz features.

STFT constants: 400-sample Hann window (25 ms at 16 kHz), 160-sample hop
(10 ms), 512-point FFT, magnitude spectrum, unnormalised triangular HTK-mel
filters spanning 0-8 kHz, log10 with a 1e-10 floor. No centre padding, so a
clip of N >= 400 samples yields 1 + (N - 400) // 160 frames.
"""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import write_atomic
from .errors import FormatError, LengthError
from .nn import Conv1d, Linear, Module
from .rng import Rng
from .tensor import Tensor, as_tensor, gelu

SAMPLE_RATE = 16000
WIN_SAMPLES = 400
HOP_SAMPLES = 160
N_FFT = 512
LOG_FLOOR = 1e-10
FRAME_RATE_HZ = 50.0


@dataclass
class WaveBuffer:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    @property
    def duration_sec(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass
class MelFrames:
    frames: np.ndarray  # [T_mel, n_mels]
    hop_ms: float = 10.0
    win_ms: float = 25.0

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def read_wav(path) -> WaveBuffer:
    """Read a RIFF/WAVE file holding 16-bit PCM, mono, 16 kHz."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise FormatError(f"{path}: not a PCM WAV file ({exc})") from None
    if channels != 1 or width != 2 or rate != SAMPLE_RATE:
        raise FormatError(
            f"{path}: need 16-bit mono {SAMPLE_RATE} Hz PCM, got {channels} ch, {8 * width}-bit, {rate} Hz"
        )
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return WaveBuffer(samples, rate)


def write_wav(path, buf: WaveBuffer) -> None:
    pcm = np.clip(np.round(np.asarray(buf.samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(buf.sample_rate_hz)
        fh.writeframes(pcm.tobytes())


def mel_frame_count(num_samples: int) -> int:
    if num_samples < WIN_SAMPLES:
        return 0
    return 1 + (num_samples - WIN_SAMPLES) // HOP_SAMPLES


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, f_max: float = SAMPLE_RATE / 2) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(f_max), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels: int, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """[n_fft // 2 + 1, n_mels] triangular filters with unit peak."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    lower, center, upper = edges[:-2], edges[1:-1], edges[2:]
    rising = (freqs[:, None] - lower) / (center - lower)
    falling = (upper - freqs[:, None]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_spectrogram(buf: WaveBuffer, n_mels: int = 80) -> MelFrames:
    if buf.sample_rate_hz != SAMPLE_RATE:
        raise FormatError(f"mel frontend needs {SAMPLE_RATE} Hz audio, got {buf.sample_rate_hz} Hz")
    x = np.asarray(buf.samples, dtype=np.float64)
    n_frames = mel_frame_count(len(x))
    if n_frames < 1:
        raise LengthError(f"need at least {WIN_SAMPLES} samples (25 ms), got {len(x)}")
    idx = np.arange(WIN_SAMPLES)[None, :] + HOP_SAMPLES * np.arange(n_frames)[:, None]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WIN_SAMPLES) / WIN_SAMPLES)
    spectrum = np.abs(np.fft.rfft(x[idx] * window, n=N_FFT, axis=1))
    mel = spectrum @ mel_filterbank(n_mels)
    return MelFrames(np.log10(np.maximum(mel, LOG_FLOOR)).astype(np.float32))


class ToyEncoder(Module):
    """Linear lift n_mels -> d, then a stride-2 conv + GELU taking 100 Hz mel frames to 50 Hz."""

    def __init__(self, n_mels: int, d_model: int, rng: Rng):
        self.lift = Linear(n_mels, d_model, rng)
        self.conv = Conv1d(d_model, d_model, 3, rng, stride=2, pad=1)

    def forward(self, mel) -> Tensor:
        frames = mel.frames if isinstance(mel, MelFrames) else mel
        x = as_tensor(frames)
        if x.shape[-2] < 2:
            raise LengthError("toy encoder needs at least two mel frames")
        return gelu(self.conv(self.lift(x)))


def toy_encoder(encoder: ToyEncoder, mel) -> Tensor:
    return encoder(mel)


# -- synthetic features ------------------------------------------------------

PATTERNS = ("tones", "chirps", "noise")
_MOTIF_SEED = 0x5EED_0F_C1A55
MOTIF_RANK = 3


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int
    duration_sec: float
    d: int
    class_id: int | None = None
    pattern: str = "tones"


def frames_for(duration_sec: float, rate_hz: float = FRAME_RATE_HZ) -> int:
    return int(round(duration_sec * rate_hz))


def synth_features(spec: SyntheticSpec, noise_std: float = 0.5) -> np.ndarray:
    """Class-conditioned feature sequence [T, d] at 50 Hz.

    Each class owns a fixed set of ``MOTIF_RANK`` directions in feature space
    and a base frequency; the sample seed only controls the phase and the
    additive noise. ``class_id=None`` draws the directions from the
    sample seed instead.
    """
    if spec.duration_sec <= 0:
        raise LengthError(f"duration must be positive, got {spec.duration_sec}")
    if spec.pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {spec.pattern!r}; expected one of {PATTERNS}")
    n = max(1, frames_for(spec.duration_sec))
    rng = Rng(spec.seed)
    motif_rng = Rng(_MOTIF_SEED).spawn(spec.class_id) if spec.class_id is not None else rng.spawn(1)
    basis = motif_rng.normal((MOTIF_RANK, spec.d), dtype=np.float64)
    base_hz = 0.5 + 0.35 * (spec.class_id or 0)
    t = np.arange(n) / FRAME_RATE_HZ
    phase = 2.0 * np.pi * rng.uniform()
    if spec.pattern == "tones":
        arg = 2.0 * np.pi * base_hz * t + phase
    elif spec.pattern == "chirps":
        arg = 2.0 * np.pi * (base_hz * t + 0.5 * base_hz * t ** 2) + phase
    else:
        arg = np.zeros_like(t)
    coeffs = np.stack([np.ones_like(t), np.sin(arg), np.cos(arg)], axis=1)
    if spec.pattern == "noise":
        coeffs[:, 1:] = 0.0
    x = coeffs @ basis + noise_std * rng.normal((n, spec.d), dtype=np.float64)
    return x.astype(np.float32)


# -- raw feature files ---------------------------------------------------------


def encode_features(features: np.ndarray) -> bytes:
    features = np.asarray(features)
    if features.ndim != 2:
        raise FormatError(f"feature matrix must be 2-d, got shape {features.shape}")
    header = struct.pack("<II", *features.shape)
    return header + np.ascontiguousarray(features, dtype="<f4").tobytes()


def write_features(path, features: np.ndarray) -> None:
    write_atomic(path, encode_features(features))


def read_features(path) -> np.ndarray:
    """Read a [T, d] float32 matrix stored as ``u32 T, u32 d`` then row-major little-endian f32."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise FormatError(f"{path}: feature file shorter than its 8-byte header")
    t, d = struct.unpack("<II", blob[:8])
    expected = 8 + 4 * t * d
    if len(blob) != expected:
        raise FormatError(f"{path}: header says {t}x{d} floats ({expected} bytes), file has {len(blob)}")
    return np.frombuffer(blob[8:], dtype="<f4").reshape(t, d).astype(np.float32)


def encoder_frame_count(num_samples: int) -> int:
    return math.ceil(mel_frame_count(num_samples) / 2)
