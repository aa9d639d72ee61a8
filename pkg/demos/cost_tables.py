"""Token counts, FLOPs and KV-cache size for each adapter at a few durations.

    python3 demos/cost_tables.py
"""

from hfqformer import cost

llm = cost.LLMS["qwen3-4b-like"]

print("five minutes of speech")
print(f"{'adapter':10s} {'tok/s':>6s} {'tokens':>7s} {'TFLOPs':>7s} {'KV MiB':>7s}")
for name, adapter in cost.ADAPTERS.items():
    r = cost.cost_report(adapter, llm, 300)
    print(f"{name:10s} {adapter.tokens_per_sec:6.2f} {r.speech_tokens:7d} {r.flops_estimate / 1e12:7.2f} {r.kv_cache_bytes / 2**20:7.1f}")

hfq = cost.ADAPTERS["hfq"]
print()
print(f"hfq emits {cost.reduction_percent(hfq, cost.ADAPTERS['avgpool']):.1f}% fewer tokens than 25 tok/s pooling")
print(f"and {cost.reduction_percent(hfq, cost.ENCODER_50HZ):.1f}% fewer than the 50 Hz encoder itself")

# small WER gain for small extra compute beats a larger gain bought with a lot of compute
print()
print("WER points gained per extra TFLOP:")
print(f"  0.3 for 0.3 T -> {cost.efficiency_score(0.3, 0.3):.2f}")
print(f"  0.1 for 1.3 T -> {cost.efficiency_score(0.1, 1.3):.2f}")

print()
print("long recordings (hfq vs avgpool tokens)")
for hours in (0.5, 1, 2, 4, 8):
    d = hours * 3600
    a, b = cost.speech_token_count(hfq, d), cost.speech_token_count(cost.ADAPTERS["avgpool"], d)
    kv = cost.kv_cache_bytes(llm, a) / 2**30
    print(f"  {hours:4.1f} h  {a:6d} vs {b:7d}  hfq KV {kv:5.2f} GiB")
