"""Layers the HFQ-Former is assembled from.

Parameter naming follows attribute names: a ``Linear`` stored as ``wq`` on an
attention module stored as ``compressor`` on ``stage1`` owns
``stage1.compressor.wq.weight`` and ``stage1.compressor.wq.bias``.

Initialisation: weights ~ N(0, 1/fan_in), biases zero, LayerNorm gain one and
shift zero, LoRA ``a`` ~ N(0, 1/d_in) and ``b`` zero.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterator

import numpy as np

from .errors import ConfigError, DimensionError
from .rng import Rng
from .tensor import Tensor, conv1d, gelu, matmul, softmax_rows, standardize

LITERAL = "literal_eq1"
PROJECTED = "projected"
ATTENTION_MODES = (LITERAL, PROJECTED)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Owns named tensors and submodules through plain attributes."""

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_tensors(full + ".")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self.named_tensors(prefix):
            if t.requires_grad:
                yield name, t

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_tensors()}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True):
        self.weight = parameter(rng.normal((d_in, d_out), std=1.0 / math.sqrt(d_in)))
        self.bias = parameter(np.zeros(d_out, dtype=np.float32)) if bias else None

    @classmethod
    def from_arrays(cls, weight: np.ndarray, bias: np.ndarray | None = None) -> "Linear":
        layer = cls.__new__(cls)
        layer.weight = parameter(np.array(weight))
        layer.bias = None if bias is None else parameter(np.array(bias))
        return layer

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LoraLinear(Module):
    """A frozen ``Linear`` plus a trainable low-rank update scaled by alpha / rank."""

    def __init__(self, base: Linear, rank: int, alpha: float, rng: Rng):
        if rank < 1 or alpha <= 0:
            raise ConfigError(f"LoRA needs rank >= 1 and alpha > 0, got {rank}, {alpha}")
        d_in, d_out = base.weight.shape
        base.weight.requires_grad = False
        if base.bias is not None:
            base.bias.requires_grad = False
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.a = parameter(rng.normal((d_in, rank), std=1.0 / math.sqrt(d_in)))
        self.b = parameter(np.zeros((rank, d_out), dtype=np.float32))

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def forward(self, x: Tensor) -> Tensor:
        return self.base(x) + matmul(matmul(x, self.a), self.b) * self.scaling

    def merged_weight(self) -> np.ndarray:
        return self.base.weight.data + self.scaling * (self.a.data @ self.b.data)

    def merge(self) -> Linear:
        """A plain ``Linear`` computing the same map in one product."""
        bias = None if self.base.bias is None else self.base.bias.data
        return Linear.from_arrays(self.merged_weight(), bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(d, dtype=np.float32))
        self.shift = parameter(np.zeros(d, dtype=np.float32))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return standardize(x, self.eps) * self.gain + self.shift


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: Rng, stride: int = 1, pad: int = 0):
        fan_in = kernel * c_in
        self.weight = parameter(rng.normal((kernel, c_in, c_out), std=1.0 / math.sqrt(fan_in)))
        self.bias = parameter(np.zeros(c_out, dtype=np.float32))
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, self.stride, self.pad)


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: Rng):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


@lru_cache(maxsize=64)
def _pe_table(length: int, d: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    rate = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((length, d))
    table[:, 0::2] = np.sin(pos / rate)
    table[:, 1::2] = np.cos(pos / rate)
    table.setflags(write=False)
    return table


def sinusoidal_pe(length: int, d: int, dtype=np.float32) -> Tensor:
    """Fixed sin/cos table: even columns sin(pos / 10000^(2i/d)), odd columns cos."""
    if d % 2:
        raise ConfigError(f"sinusoidal positional encoding needs an even width, got {d}")
    if length < 1:
        raise ConfigError(f"positional encoding length must be >= 1, got {length}")
    return Tensor(_pe_table(length, d).astype(dtype))


def _with_pe(x: Tensor) -> Tensor:
    return x + sinusoidal_pe(x.shape[-2], x.shape[-1], x.dtype)


def cross_attention(
    queries: Tensor,
    keys_values: Tensor,
    use_pe: bool = True,
    mode: str = LITERAL,
    module: "MultiHeadCrossAttention | None" = None,
) -> tuple[Tensor, np.ndarray]:
    """Cross-attention from ``queries`` [..., m, d] onto ``keys_values`` [..., n, d].

    Positional encodings go onto queries and keys only; values are the raw
    rows. Literal mode is a single head with no projections:
    ``softmax((Q + PE)(X + PE)^T / sqrt(d)) X``. Projected mode needs the
    module holding the learned projections.

    Returns the output and the attention weights as a numpy array of shape
    [..., heads, m, n] (heads is 1 in literal mode).
    """
    if module is not None:
        return module(queries, keys_values, use_pe)
    if mode != LITERAL:
        raise ConfigError("projected attention needs a MultiHeadCrossAttention module")
    return _literal_attention(queries, keys_values, use_pe)


def _check_dims(queries: Tensor, keys_values: Tensor):
    if queries.shape[-1] != keys_values.shape[-1]:
        raise DimensionError(
            f"query width {queries.shape[-1]} does not match key/value width {keys_values.shape[-1]}"
        )
    if keys_values.shape[-2] < 1:
        raise DimensionError("cross-attention needs at least one key/value row")


def _literal_attention(queries: Tensor, keys_values: Tensor, use_pe: bool):
    _check_dims(queries, keys_values)
    d = queries.shape[-1]
    q = _with_pe(queries) if use_pe else queries
    k = _with_pe(keys_values) if use_pe else keys_values
    weights = softmax_rows(matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d)))
    out = matmul(weights, keys_values)
    return out, weights.data[..., None, :, :]


class MultiHeadCrossAttention(Module):
    def __init__(self, d: int, heads: int, rng: Rng, mode: str = PROJECTED):
        if mode not in ATTENTION_MODES:
            raise ConfigError(f"unknown attention mode {mode!r}; expected one of {ATTENTION_MODES}")
        self.mode = mode
        self.d = d
        if mode == LITERAL:
            self.heads = 1
            return
        if heads < 1 or d % heads:
            raise ConfigError(f"{heads} heads do not divide width {d}")
        self.heads = heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        n = x.shape[-2]
        parts = x.reshape(x.shape[:-2] + (n, self.heads, self.d // self.heads))
        return parts.swapaxes(-3, -2)

    def forward(self, queries: Tensor, keys_values: Tensor, use_pe: bool = True):
        if self.mode == LITERAL:
            return _literal_attention(queries, keys_values, use_pe)
        _check_dims(queries, keys_values)
        if queries.shape[-1] != self.d:
            raise DimensionError(f"attention built for width {self.d}, got {queries.shape[-1]}")
        q_in = _with_pe(queries) if use_pe else queries
        k_in = _with_pe(keys_values) if use_pe else keys_values
        q = self._split(self.wq(q_in))
        k = self._split(self.wk(k_in))
        v = self._split(self.wv(keys_values))
        scale = 1.0 / math.sqrt(self.d // self.heads)
        weights = softmax_rows(matmul(q, k.swapaxes(-1, -2)) * scale)
        mixed = matmul(weights, v).swapaxes(-3, -2)
        merged = mixed.reshape(mixed.shape[:-2] + (self.d,))
        return self.wo(merged), weights.data


def layer_norm(x: Tensor, layer: LayerNorm) -> Tensor:
    return layer(x)


def lora_forward(layer: LoraLinear, x: Tensor) -> Tensor:
    return layer(x)
