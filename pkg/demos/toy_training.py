"""Train the desk-scale compressor on the synthetic tone task and watch the loss.

    python3 demos/toy_training.py [steps]

Takes about ten seconds at the default 300 steps.
"""

import sys

from hfqformer import HfqConfig
from hfqformer.toy import ToyTaskSpec, train_toy

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
task = ToyTaskSpec(steps=steps)
cfg = HfqConfig.desk()

print(f"{task.num_classes} classes, {task.examples_per_class} examples each, {task.duration_sec}s clips")
print(f"compressor: {cfg.num_stages} stages x {cfg.queries_per_stage} queries -> {cfg.compressed_tokens} tokens of width {cfg.d_model}")

log, model = train_toy(task, cfg)

# the head starts at zero, so the first loss is ln(num_classes)
print(f"initial loss {log.initial_loss:.4f}")
for step, loss, gnorm in log.rows()[:: max(1, steps // 10)]:
    print(f"  step {step:4d}  batch loss {loss:.4f}  |grad| {gnorm:.3f}")
print(f"final train loss {log.final_loss:.4f}")
print(f"held-out accuracy {log.accuracy:.3f} (chance {1 / task.num_classes:.3f})")
