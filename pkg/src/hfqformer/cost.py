"""Analytical LLM-side cost of feeding speech tokens to a decoder.

FLOPs follow ``F = P * N`` (one multiply-accumulate per parameter per input
token, counted as one FLOP). With P = 4.06e9 this lands within 6% of the
reference 5-minute figures for all four adapters; ``2 * P * N`` would be off
by a factor of two. The attention prefill term is left out.

KV-cache bytes are ``2 * layers * kv_dim * tokens * bytes_per_elem``. Layer
count and KV width of the default LLM profile are assumptions (36 layers,
8 KV heads of width 128), so only ratios and linearity are meaningful.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

from .errors import DomainError

HFQ_WINDOW_SEC = 30.0
HFQ_TOKENS_PER_WINDOW = 50


@dataclass(frozen=True)
class AdapterProfile:
    name: str
    tokens_per_sec: float
    windowed: bool = False  # True: N_c tokens per started window instead of rate * duration

    def __post_init__(self):
        if self.tokens_per_sec <= 0:
            raise DomainError(f"{self.name}: tokens_per_sec must be positive")


@dataclass(frozen=True)
class LlmProfile:
    name: str
    params: float
    layers: int
    kv_dim_per_layer: int
    bytes_per_elem: int = 2


ADAPTERS = {
    "avgpool": AdapterProfile("avgpool", 25.0),
    "sq-former": AdapterProfile("sq-former", 2.67),
    "wq-former": AdapterProfile("wq-former", 2.93),
    "hfq": AdapterProfile("hfq", HFQ_TOKENS_PER_WINDOW / HFQ_WINDOW_SEC, windowed=True),
}
# Frame rate of the speech encoder output, used as the uncompressed reference.
ENCODER_50HZ = AdapterProfile("encoder-50hz", 50.0)

LLMS = {
    "qwen3-4b-like": LlmProfile("qwen3-4b-like", params=4.06e9, layers=36, kv_dim_per_layer=1024),
}


@dataclass
class CostReport:
    adapter: str
    llm: str
    duration_sec: float
    speech_tokens: int
    prompt_tokens: int
    flops_estimate: float
    kv_cache_bytes: float

    def to_dict(self) -> dict:
        return asdict(self)


def get_adapter(name: str) -> AdapterProfile:
    try:
        return ADAPTERS[name.lower()]
    except KeyError:
        raise DomainError(f"unknown adapter {name!r}; known: {', '.join(ADAPTERS)}") from None


def get_llm(name: str) -> LlmProfile:
    try:
        return LLMS[name]
    except KeyError:
        raise DomainError(f"unknown LLM profile {name!r}; known: {', '.join(LLMS)}") from None


def window_count(duration_sec: float, window_sec: float = HFQ_WINDOW_SEC) -> int:
    # rounding guards against 89.99999 style drift when duration is a multiple of the window
    return math.ceil(round(duration_sec / window_sec, 9))


def speech_token_count(adapter: AdapterProfile, duration_sec: float) -> int:
    if duration_sec <= 0:
        raise DomainError(f"duration must be positive, got {duration_sec}")
    if adapter.windowed:
        per_window = round(adapter.tokens_per_sec * HFQ_WINDOW_SEC)
        return per_window * window_count(duration_sec)
    return int(round(adapter.tokens_per_sec * duration_sec))


def flops_estimate(llm: LlmProfile, total_tokens: int) -> float:
    if total_tokens < 0:
        raise DomainError("token count must be nonnegative")
    return llm.params * total_tokens


def kv_cache_bytes(llm: LlmProfile, total_tokens: int) -> float:
    if total_tokens < 0:
        raise DomainError("token count must be nonnegative")
    return 2 * llm.layers * llm.kv_dim_per_layer * total_tokens * llm.bytes_per_elem


def reduction_percent(adapter_a: AdapterProfile, adapter_b: AdapterProfile) -> float:
    """How many percent fewer tokens per second ``adapter_a`` emits than ``adapter_b``."""
    return 100.0 * (1.0 - adapter_a.tokens_per_sec / adapter_b.tokens_per_sec)


def efficiency_score(delta_wer_points: float, delta_flops_tera: float) -> float:
    """WER reduction bought per extra TFLOP."""
    if delta_flops_tera <= 0:
        raise DomainError(f"FLOPs increase must be positive, got {delta_flops_tera}")
    return delta_wer_points / delta_flops_tera


def cost_report(adapter: AdapterProfile, llm: LlmProfile, duration_sec: float, prompt_tokens: int = 0) -> CostReport:
    speech = speech_token_count(adapter, duration_sec)
    total = speech + prompt_tokens
    return CostReport(
        adapter=adapter.name,
        llm=llm.name,
        duration_sec=duration_sec,
        speech_tokens=speech,
        prompt_tokens=prompt_tokens,
        flops_estimate=flops_estimate(llm, total),
        kv_cache_bytes=kv_cache_bytes(llm, total),
    )


SWEEP_HEADER = ("duration_sec", "adapter", "tokens", "flops", "kv_bytes")


def scaling_sweep(llm: LlmProfile, adapters, durations) -> list[tuple]:
    durations = list(durations)
    if not durations or any(d <= 0 for d in durations):
        raise DomainError("durations must be a nonempty list of positive numbers")
    rows = []
    for duration in durations:
        for adapter in adapters:
            n = speech_token_count(adapter, duration)
            rows.append((duration, adapter.name, n, flops_estimate(llm, n), kv_cache_bytes(llm, n)))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for duration, name, tokens, flops, kv in rows:
        writer.writerow([_num(duration), name, tokens, _num(flops), _num(kv)])
    return buf.getvalue()


def _num(x) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))
