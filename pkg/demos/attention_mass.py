"""Where does the distillation block look? Per-stage attention mass, before and after training.

    python3 demos/attention_mass.py

Stage 1 sees the full frame rate, later stages see features halved in
length, so a shift of mass between stages says which resolution the
compressed tokens draw from.
"""

import numpy as np

from hfqformer import HfqConfig, attention_mass_per_stage, no_grad
from hfqformer.rng import Rng
from hfqformer.toy import ToyClassifier, ToyTaskSpec, make_dataset, train_toy

cfg = HfqConfig.desk()
task = ToyTaskSpec(steps=200)
x, _ = make_dataset(task, cfg.d_model, 1, 2)


def masses(model):
    out = []
    with no_grad():
        for clip in x:
            _, diag = model.hfq(clip)
            out.append(attention_mass_per_stage(diag.distill_weights, cfg.num_stages, cfg.queries_per_stage))
    return np.mean(out, axis=0)


untrained = ToyClassifier(cfg, task.num_classes, Rng(task.seed).spawn(1))
_, trained = train_toy(task, cfg)

np.set_printoptions(precision=4, suppress=True)
print("uniform reference:", np.full(cfg.num_stages, 1 / cfg.num_stages))
print("untrained        :", masses(untrained))
print("trained          :", masses(trained))
