"""Analytical token, FLOPs and KV-cache cost model."""

import csv
import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hfqformer import cost
from hfqformer.cost import (
    ADAPTERS,
    ENCODER_50HZ,
    LLMS,
    AdapterProfile,
    cost_report,
    efficiency_score,
    flops_estimate,
    get_adapter,
    kv_cache_bytes,
    reduction_percent,
    scaling_sweep,
    speech_token_count,
    sweep_csv,
)
from hfqformer.errors import DomainError

LLM = LLMS["qwen3-4b-like"]
HFQ = ADAPTERS["hfq"]
AVGPOOL = ADAPTERS["avgpool"]

# reference rows: adapter, tokens/sec, LLM TFLOPs at 5 minutes
TABLE2 = [("avgpool", 25.0, 30.6), ("sq-former", 2.67, 3.32), ("wq-former", 2.93, 3.65), ("hfq", 1.67, 2.15)]


class TestTokenCounts:
    def test_hfq_thirty_seconds(self):
        assert speech_token_count(HFQ, 30) == 50

    def test_avgpool_five_minutes(self):
        assert speech_token_count(AVGPOOL, 300) == 7500

    def test_hfq_five_minutes(self):
        assert speech_token_count(HFQ, 300) == 500
        assert abs(500 - 1.67 * 300) <= 1

    def test_partial_window_rounds_up(self):
        assert speech_token_count(HFQ, 31) == 100
        assert speech_token_count(HFQ, 0.1) == 50

    def test_window_law(self):
        for k in range(1, 961):
            assert speech_token_count(HFQ, 30 * k) == 50 * k

    def test_table2_token_counts(self):
        counts = [speech_token_count(get_adapter(n), 300) for n, _, _ in TABLE2]
        assert counts == [7500, 801, 879, 500]

    def test_nonpositive_duration(self):
        with pytest.raises(DomainError):
            speech_token_count(HFQ, 0)

    def test_builtin_rates(self):
        assert {n: a.tokens_per_sec for n, a in ADAPTERS.items()} == pytest.approx(
            {"avgpool": 25.0, "sq-former": 2.67, "wq-former": 2.93, "hfq": 1.6667}, abs=1e-4
        )

    def test_bad_profile(self):
        with pytest.raises(DomainError):
            AdapterProfile("x", 0.0)
        with pytest.raises(DomainError):
            get_adapter("mean-pool")
        with pytest.raises(DomainError):
            cost.get_llm("gpt")


class TestFlops:
    @pytest.mark.parametrize("name,rate,tflops", TABLE2)
    def test_table2_within_ten_percent(self, name, rate, tflops):
        n = round(rate * 300)
        assert abs(flops_estimate(LLM, n) / 1e12 - tflops) / tflops < 0.10

    def test_examples(self):
        assert flops_estimate(LLM, 500) == pytest.approx(2.03e12)
        assert flops_estimate(LLM, 7500) == pytest.approx(3.045e13)
        assert flops_estimate(LLM, 0) == 0

    @given(st.integers(0, 10**7), st.integers(0, 10**7))
    def test_linear_and_monotone(self, a, b):
        assert flops_estimate(LLM, a + b) == pytest.approx(flops_estimate(LLM, a) + flops_estimate(LLM, b))
        if a <= b:
            assert flops_estimate(LLM, a) <= flops_estimate(LLM, b)

    def test_negative_tokens(self):
        with pytest.raises(DomainError):
            flops_estimate(LLM, -1)


class TestKvCache:
    def test_zero(self):
        assert kv_cache_bytes(LLM, 0) == 0

    @given(st.integers(0, 10**6))
    def test_doubling(self, n):
        assert kv_cache_bytes(LLM, 2 * n) == 2 * kv_cache_bytes(LLM, n)

    def test_eight_hour_ratio(self):
        hfq = speech_token_count(HFQ, 28800)
        pool = speech_token_count(AVGPOOL, 28800)
        assert (hfq, pool) == (48000, 720000)
        assert kv_cache_bytes(LLM, hfq) * 15 == kv_cache_bytes(LLM, pool)

    def test_formula(self):
        assert kv_cache_bytes(LLM, 10) == 2 * LLM.layers * LLM.kv_dim_per_layer * 10 * 2


class TestReductions:
    def test_vs_frame_adapter(self):
        assert 93.0 <= reduction_percent(HFQ, AVGPOOL) <= 93.5
        assert reduction_percent(HFQ, AVGPOOL) == pytest.approx(93.33, abs=0.01)

    def test_vs_encoder(self):
        assert 96.5 <= reduction_percent(HFQ, ENCODER_50HZ) <= 97.0

    def test_identity(self):
        assert reduction_percent(AVGPOOL, AVGPOOL) == 0.0


class TestEfficiency:
    def test_table7(self):
        assert f"{efficiency_score(0.3, 0.3):.2f}" == "1.00"
        assert f"{efficiency_score(0.1, 1.3):.2f}" == "0.08"
        assert efficiency_score(0.1, 1.3) == pytest.approx(0.0769, abs=1e-4)

    def test_zero_gain(self):
        assert efficiency_score(0.0, 2.0) == 0.0

    @pytest.mark.parametrize("delta", [0.0, -1.0])
    def test_nonpositive_cost(self, delta):
        with pytest.raises(DomainError):
            efficiency_score(0.1, delta)


class TestReportAndSweep:
    def test_report(self):
        r = cost_report(HFQ, LLM, 300, prompt_tokens=20)
        assert (r.speech_tokens, r.prompt_tokens) == (500, 20)
        assert r.flops_estimate == flops_estimate(LLM, 520)
        assert set(r.to_dict()) == {"adapter", "llm", "duration_sec", "speech_tokens", "prompt_tokens",
                                    "flops_estimate", "kv_cache_bytes"}

    def test_two_windows(self):
        rows = scaling_sweep(LLM, [HFQ], [30, 60])
        assert [r[2] for r in rows] == [50, 100]

    def test_row_count(self):
        assert len(scaling_sweep(LLM, [HFQ, AVGPOOL], [45])) == 2

    def test_empty_or_bad_durations(self):
        with pytest.raises(DomainError):
            scaling_sweep(LLM, [HFQ], [])
        with pytest.raises(DomainError):
            scaling_sweep(LLM, [HFQ], [60, -1])

    def test_csv_header_and_monotone(self):
        minutes = [1, 2, 5, 10, 30, 60, 120, 240, 480]
        text = sweep_csv(scaling_sweep(LLM, list(ADAPTERS.values()), [60 * m for m in minutes]))
        rows = list(csv.DictReader(io.StringIO(text)))
        assert text.splitlines()[0] == "duration_sec,adapter,tokens,flops,kv_bytes"
        for name in ADAPTERS:
            tokens = [int(r["tokens"]) for r in rows if r["adapter"] == name]
            assert tokens == sorted(tokens)
        hfq = [(float(r["duration_sec"]), float(r["kv_bytes"])) for r in rows if r["adapter"] == "hfq"]
        per_second = {kv / d for d, kv in hfq}
        assert len(per_second) == 1  # exactly linear at window boundaries
