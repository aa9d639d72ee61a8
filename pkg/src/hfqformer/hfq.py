"""Hierarchical frame-querying compressor.

Pipeline for one window of frame features ``X0`` [T, d]:

1. stage 1: learnable queries Q1 attend over X0 (full resolution);
   stage i >= 2: ``Xi = Downsampler_i(X_{i-1})`` halves the length and
   queries Qi attend over Xi. Stage attention injects sinusoidal PE.
2. the stage outputs are stacked into a bank of ``num_stages * M`` rows and
   ``N_c`` compressed queries attend over it (no PE).
3. a pre-norm recovery block lets the compressed tokens attend over the
   concatenated per-resolution features [X0; X1; ...] and adds a feed-forward
   sub-layer.

The output always has ``compressed_tokens`` rows regardless of T.
"""

from __future__ import annotations

import contextvars
import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, LengthError
from .nn import (
    ATTENTION_MODES,
    PROJECTED,
    Conv1d,
    FeedForward,
    LayerNorm,
    Module,
    MultiHeadCrossAttention,
    parameter,
)
from .rng import Rng
from .tensor import Tensor, as_tensor, concat, gelu, no_grad

QUERY_INIT_STD = 0.02


@dataclass(frozen=True)
class HfqConfig:
    d_model: int = 64
    num_stages: int = 3
    queries_per_stage: int = 8
    compressed_tokens: int = 5
    heads: int = 4
    downsample_kernel: int = 3
    downsample_stride: int = 2
    window_seconds: float = 30.0
    frame_rate_hz: float = 50.0
    attention_mode: str = PROJECTED

    def __post_init__(self):
        if self.num_stages not in (1, 2, 3):
            raise ConfigError(f"num_stages must be 1, 2 or 3, got {self.num_stages}")
        if self.d_model < 2 or self.d_model % 2:
            raise ConfigError(f"d_model must be a positive even number, got {self.d_model}")
        if self.queries_per_stage < 1 or self.compressed_tokens < 1:
            raise ConfigError("queries_per_stage and compressed_tokens must be positive")
        if self.downsample_kernel < 1 or self.downsample_kernel % 2 == 0:
            raise ConfigError(f"downsample_kernel must be odd, got {self.downsample_kernel}")
        if self.downsample_stride < 1:
            raise ConfigError("downsample_stride must be >= 1")
        if self.window_seconds <= 0 or self.frame_rate_hz <= 0:
            raise ConfigError("window_seconds and frame_rate_hz must be positive")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.attention_mode == PROJECTED and (self.heads < 1 or self.d_model % self.heads):
            raise ConfigError(f"heads={self.heads} must divide d_model={self.d_model}")

    @classmethod
    def desk(cls, **overrides) -> "HfqConfig":
        return cls(**overrides)

    @classmethod
    def paper(cls, **overrides) -> "HfqConfig":
        # heads is not given in the source configuration; 8 is an assumption.
        values = dict(d_model=1280, num_stages=3, queries_per_stage=80, compressed_tokens=50, heads=8)
        values.update(overrides)
        return cls(**values)

    @property
    def window_frames(self) -> int:
        return int(round(self.window_seconds * self.frame_rate_hz))

    @property
    def token_rate(self) -> float:
        return self.compressed_tokens / self.window_seconds

    def replace(self, **changes) -> "HfqConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "HfqConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**values)

    @classmethod
    def load(cls, path) -> "HfqConfig":
        try:
            values = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(values)


def downsampled_length(length: int, kernel: int = 3, stride: int = 2) -> int:
    pad = kernel // 2
    return (length + 2 * pad - kernel) // stride + 1


def stage_lengths(length: int, cfg: HfqConfig) -> list[int]:
    lengths = [length]
    for _ in range(cfg.num_stages - 1):
        lengths.append(downsampled_length(lengths[-1], cfg.downsample_kernel, cfg.downsample_stride))
    return lengths


@dataclass
class CompressedTokens:
    tokens: Tensor
    window_index: int = 0
    source_duration_sec: float = 0.0

    @property
    def count(self) -> int:
        return self.tokens.shape[-2]


@dataclass
class Diagnostics:
    """Attention weights recorded during one forward pass, each [..., heads, rows, cols]."""

    stage_weights: list[np.ndarray] = field(default_factory=list)
    distill_weights: np.ndarray | None = None
    recovery_weights: np.ndarray | None = None
    stage_lengths: list[int] = field(default_factory=list)
    distill_bank_rows: int = 0
    recovery_bank_rows: int = 0


class Downsampler(Module):
    """conv(k, stride 1) -> GELU -> conv(k, stride s) -> GELU, 'same' padding."""

    def __init__(self, d: int, kernel: int, stride: int, rng: Rng):
        pad = kernel // 2
        self.conv1 = Conv1d(d, d, kernel, rng, stride=1, pad=pad)
        self.conv2 = Conv1d(d, d, kernel, rng, stride=stride, pad=pad)

    def forward(self, x: Tensor) -> Tensor:
        return gelu(self.conv2(gelu(self.conv1(x))))


class Stage(Module):
    def __init__(self, cfg: HfqConfig, index: int, rng: Rng):
        self.index = index
        self.queries = parameter(rng.normal((cfg.queries_per_stage, cfg.d_model), std=QUERY_INIT_STD))
        self.compressor = MultiHeadCrossAttention(cfg.d_model, cfg.heads, rng, cfg.attention_mode)
        if index >= 2:
            self.downsampler = Downsampler(cfg.d_model, cfg.downsample_kernel, cfg.downsample_stride, rng)

    def forward(self, x_prev: Tensor) -> tuple[Tensor, Tensor, np.ndarray]:
        if x_prev.shape[-2] < 1:
            raise LengthError("stage input has no frames")
        x = self.downsampler(x_prev) if self.index >= 2 else x_prev
        q_hat, weights = self.compressor(self.queries, x, use_pe=True)
        return q_hat, x, weights


class RecoveryBlock(Module):
    """Pre-norm cross-attention and feed-forward sub-layers, each with a residual."""

    def __init__(self, cfg: HfqConfig, rng: Rng):
        d = cfg.d_model
        self.norm_attn = LayerNorm(d)
        self.attn = MultiHeadCrossAttention(d, cfg.heads, rng, cfg.attention_mode)
        self.norm_ff = LayerNorm(d)
        self.ff = FeedForward(d, 4 * d, rng)

    def forward(self, tokens: Tensor, bank: Tensor) -> tuple[Tensor, np.ndarray]:
        attended, weights = self.attn(self.norm_attn(tokens), bank, use_pe=False)
        h = tokens + attended
        return h + self.ff(self.norm_ff(h)), weights


class DistillationHead(Module):
    def __init__(self, cfg: HfqConfig, rng: Rng):
        self.queries = parameter(rng.normal((cfg.compressed_tokens, cfg.d_model), std=QUERY_INIT_STD))
        self.attn = MultiHeadCrossAttention(cfg.d_model, cfg.heads, rng, cfg.attention_mode)

    def forward(self, stage_bank: Tensor) -> tuple[Tensor, np.ndarray]:
        return self.attn(self.queries, stage_bank, use_pe=False)


class HfqFormer(Module):
    """The full compressor. Parameters are created in a fixed order from ``seed``."""

    def __init__(self, cfg: HfqConfig, seed: int = 0, rng: Rng | None = None):
        self.cfg = cfg
        rng = rng if rng is not None else Rng(seed)
        for i in range(1, cfg.num_stages + 1):
            setattr(self, f"stage{i}", Stage(cfg, i, rng))
        self.distill = DistillationHead(cfg, rng)
        self.recovery = RecoveryBlock(cfg, rng)

    @property
    def stages(self) -> list[Stage]:
        return [getattr(self, f"stage{i}") for i in range(1, self.cfg.num_stages + 1)]

    def downsample(self, x, stage: int = 2) -> Tensor:
        return self.stages[stage - 1].downsampler(as_tensor(x))

    def stage_forward(self, i: int, x_prev) -> tuple[Tensor, Tensor]:
        if not 1 <= i <= self.cfg.num_stages:
            raise ConfigError(f"stage index {i} outside 1..{self.cfg.num_stages}")
        q_hat, x, _ = self.stages[i - 1](as_tensor(x_prev))
        return q_hat, x

    def forward(self, features) -> tuple[Tensor, Diagnostics]:
        x = as_tensor(features)
        if x.ndim < 2:
            raise DimensionError(f"features must be [T, d], got shape {x.shape}")
        if x.shape[-1] != self.cfg.d_model:
            raise DimensionError(f"features have width {x.shape[-1]}, model expects {self.cfg.d_model}")
        if x.shape[-2] < 1:
            raise LengthError("features have no frames")
        diag = Diagnostics()
        q_hats, banks = [], []
        for stage in self.stages:
            q_hat, x, weights = stage(x)
            q_hats.append(q_hat)
            banks.append(x)
            diag.stage_weights.append(weights)
            diag.stage_lengths.append(x.shape[-2])
        stage_bank = concat(q_hats, axis=-2) if len(q_hats) > 1 else q_hats[0]
        feature_bank = concat(banks, axis=-2) if len(banks) > 1 else banks[0]
        distilled, diag.distill_weights = self.distill(stage_bank)
        tokens, diag.recovery_weights = self.recovery(distilled, feature_bank)
        diag.distill_bank_rows = stage_bank.shape[-2]
        diag.recovery_bank_rows = feature_bank.shape[-2]
        return tokens, diag


def hfq_forward(model: HfqFormer, features) -> tuple[CompressedTokens, Diagnostics]:
    tokens, diag = model(features)
    duration = as_tensor(features).shape[-2] / model.cfg.frame_rate_hz
    return CompressedTokens(tokens, 0, duration), diag


def split_windows(features: np.ndarray, cfg: HfqConfig) -> list[tuple[np.ndarray, int]]:
    """Consecutive full windows; the last one is zero-padded. Returns (window, real_frames)."""
    n = cfg.window_frames
    total = features.shape[0]
    if total < 1:
        raise LengthError("no frames to compress")
    windows = []
    for start in range(0, total, n):
        chunk = features[start:start + n]
        real = chunk.shape[0]
        if real < n:
            chunk = np.concatenate([chunk, np.zeros((n - real, chunk.shape[1]), dtype=chunk.dtype)])
        windows.append((chunk, real))
    return windows


def compress_long_form(
    model: HfqFormer, features, workers: int = 1, with_diagnostics: bool = False
):
    """Compress arbitrarily long features window by window.

    Windows are independent, so ``workers > 1`` runs them on a thread pool
    (numpy releases the GIL inside BLAS). Returns a list of
    ``CompressedTokens``, plus per-window diagnostics when requested.
    """
    data = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float32)
    if data.ndim != 2 or data.shape[1] != model.cfg.d_model:
        raise DimensionError(f"features must be [T, {model.cfg.d_model}], got {data.shape}")
    windows = split_windows(data, model.cfg)
    rate = model.cfg.frame_rate_hz

    def run(item):
        index, (chunk, real) = item
        with no_grad():
            tokens, diag = model(Tensor(chunk))
        return CompressedTokens(tokens, index, real / rate), diag

    if workers > 1 and len(windows) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ctx = contextvars.copy_context()
            results = list(pool.map(lambda item: ctx.copy().run(run, item), enumerate(windows)))
    else:
        results = [run(item) for item in enumerate(windows)]
    out = [r[0] for r in results]
    if with_diagnostics:
        return out, [r[1] for r in results]
    return out


def attention_mass_per_stage(distill_weights: np.ndarray, num_stages: int, queries_per_stage: int) -> np.ndarray:
    """Share of distillation attention landing on each stage's block of M columns.

    Averages over compressed queries and heads (and any leading batch axes).
    """
    w = np.asarray(distill_weights, dtype=np.float64)
    if w.shape[-1] != num_stages * queries_per_stage:
        raise DimensionError(
            f"distillation weights have {w.shape[-1]} columns, expected {num_stages} x {queries_per_stage}"
        )
    per_stage = w.reshape(w.shape[:-1] + (num_stages, queries_per_stage)).sum(axis=-1)
    return per_stage.reshape(-1, num_stages).mean(axis=0)


def count_parameters(cfg: HfqConfig) -> int:
    """Trainable parameter count of ``HfqFormer(cfg)``, computed in closed form."""
    d, m, s = cfg.d_model, cfg.queries_per_stage, cfg.num_stages
    attention = 4 * (d * d + d) if cfg.attention_mode == PROJECTED else 0
    conv = cfg.downsample_kernel * d * d + d
    total = s * (m * d + attention)
    total += (s - 1) * 2 * conv
    total += cfg.compressed_tokens * d + attention  # distillation
    total += 2 * (2 * d) + attention + (d * 4 * d + 4 * d) + (4 * d * d + d)  # recovery
    return total


REPORTED_PARAMETERS = 56_000_000
