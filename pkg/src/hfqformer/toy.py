"""Desk-scale trainability and gradient checks.

The toy task classifies synthetic class-conditioned feature sequences with
``HfqFormer -> mean over tokens -> Linear -> softmax cross-entropy``, trained
by plain minibatch SGD. It only shows the compressor is trainable end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError
from .frontend import SyntheticSpec, ToyEncoder, WaveBuffer, mel_spectrogram, synth_features
from .hfq import HfqConfig, HfqFormer
from .nn import Linear, Module
from .rng import Rng
from .tensor import Tensor, cross_entropy, grad_check, no_grad


class ClassifierHead(Module):
    """Mean-pool over tokens, then a linear layer to class logits.

    The projection starts at zero so an untrained classifier outputs uniform
    logits (chance accuracy, loss ln C) instead of a seed-dependent class map.
    """

    def __init__(self, d_model: int, num_classes: int, rng: Rng, zero_init: bool = True):
        self.proj = Linear(d_model, num_classes, rng)
        if zero_init:
            self.proj.weight.data[:] = 0.0

    def forward(self, tokens: Tensor) -> Tensor:
        pooled = tokens.mean(axis=-2, keepdims=True)
        logits = self.proj(pooled)
        return logits.reshape(logits.shape[:-2] + (logits.shape[-1],))


class ToyClassifier(Module):
    """Compressor plus head. Compressor tensors keep their bare names in checkpoints."""

    def __init__(self, cfg: HfqConfig, num_classes: int, rng: Rng):
        self.hfq = HfqFormer(cfg, rng=rng)
        self.head = ClassifierHead(cfg.d_model, num_classes, rng)

    def named_tensors(self, prefix: str = ""):
        yield from self.hfq.named_tensors(prefix)
        yield from self.head.named_tensors(prefix + "head.")

    def forward(self, features) -> Tensor:
        tokens, _ = self.hfq(features)
        return self.head(tokens)


@dataclass(frozen=True)
class ToyTaskSpec:
    num_classes: int = 8
    examples_per_class: int = 64
    heldout_per_class: int = 16
    duration_sec: float = 1.2
    seed: int = 0
    steps: int = 300
    learning_rate: float = 3e-3
    batch_size: int = 32
    pattern: str = "tones"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("toy task needs at least two classes")
        if self.steps < 0 or self.batch_size < 1 or self.examples_per_class < 1:
            raise ValueError("steps must be >= 0 and batch/example counts positive")


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    accuracy: float = math.nan

    def rows(self):
        return list(zip(self.steps, self.losses, self.grad_norms))

    def to_csv(self) -> str:
        lines = ["step,loss,grad_norm"]
        lines += [f"{s},{l!r},{g!r}" for s, l, g in self.rows()]
        return "\n".join(lines) + "\n"


def make_dataset(task: ToyTaskSpec, d: int, split: int, per_class: int, label_map=None):
    """Stacked features [N, T, d] and integer labels for one split (0 train, 1 held-out)."""
    root = Rng(task.seed).spawn(1000 + split)
    label_map = np.arange(task.num_classes) if label_map is None else np.asarray(label_map)
    xs, ys = [], []
    for c in range(task.num_classes):
        for j in range(per_class):
            sample_seed = root.spawn(c * 1_000_003 + j).seed
            spec = SyntheticSpec(sample_seed, task.duration_sec, d, class_id=c, pattern=task.pattern)
            xs.append(synth_features(spec))
            ys.append(label_map[c])
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


def _evaluate(model: ToyClassifier, x: np.ndarray, y: np.ndarray, batch: int = 128):
    total, correct = 0.0, 0
    with no_grad():
        for lo in range(0, len(x), batch):
            logits = model(Tensor(x[lo:lo + batch]))
            total += float(cross_entropy(logits, y[lo:lo + batch]).data.sum())
            correct += int((logits.data.argmax(axis=-1) == y[lo:lo + batch]).sum())
    return total / len(x), correct / len(x)


def train_toy(task: ToyTaskSpec, cfg: HfqConfig, label_permutation=None):
    """Train a ``ToyClassifier`` with SGD; returns (TrainLog, model).

    ``label_permutation`` maps class ids to training labels, to show the
    model learns the features rather than the label order.
    """
    rng = Rng(task.seed)
    model = ToyClassifier(cfg, task.num_classes, rng.spawn(1))
    x_train, y_train = make_dataset(task, cfg.d_model, 0, task.examples_per_class, label_permutation)
    x_test, y_test = make_dataset(task, cfg.d_model, 1, task.heldout_per_class, label_permutation)
    params = model.parameters()
    log = TrainLog()
    log.initial_loss, _ = _evaluate(model, x_train, y_train)

    order_rng = rng.spawn(2)
    order = np.empty(0, dtype=np.int64)
    for step in range(task.steps):
        if len(order) < task.batch_size:
            order = np.concatenate([order, order_rng.permutation(len(x_train))])
        idx, order = order[:task.batch_size], order[task.batch_size:]
        model.zero_grad()
        loss = cross_entropy(model(Tensor(x_train[idx])), y_train[idx]).mean()
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"loss became {value} at step {step}", step=step)
        loss.backward(params)
        norm = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params))
        for p in params:
            p.data -= np.asarray(task.learning_rate, dtype=p.data.dtype) * p.grad
        log.steps.append(step)
        log.losses.append(value)
        log.grad_norms.append(norm)

    log.final_loss, _ = _evaluate(model, x_train, y_train)
    _, log.accuracy = _evaluate(model, x_test, y_test)
    return log, model


# -- gradient check over the whole frontend + compressor + head graph ----------

GRADCHECK_THRESHOLD = 1e-3


def gradcheck_wave(num_samples: int = 4080, seed: int = 0) -> WaveBuffer:
    """A seeded chirp plus noise, long enough for 24 mel frames at the default size."""
    t = np.arange(num_samples) / 16000.0
    noise = Rng(seed).normal(num_samples, std=0.05, dtype=np.float64)
    samples = 0.5 * np.sin(2 * np.pi * (300.0 * t + 4000.0 * t * t)) + noise
    return WaveBuffer(samples.astype(np.float32))


class GradcheckGraph(Module):
    def __init__(self, cfg: HfqConfig, n_mels: int, num_classes: int, rng: Rng):
        self.encoder = ToyEncoder(n_mels, cfg.d_model, rng)
        self.hfq = HfqFormer(cfg, rng=rng)
        # a zero head would zero every upstream gradient and make the check vacuous
        self.head = ClassifierHead(cfg.d_model, num_classes, rng, zero_init=False)

    def forward(self, mel) -> Tensor:
        tokens, _ = self.hfq(self.encoder(mel))
        return self.head(tokens)

    def groups(self) -> dict[str, list[Tensor]]:
        out: dict[str, list[Tensor]] = {}
        for name, p in self.named_parameters():
            parts = name.split(".")
            key = parts[1] if parts[0] == "hfq" else parts[0]
            out.setdefault(key, []).append(p)
        return out


def run_gradcheck(
    cfg: HfqConfig,
    seed: int = 0,
    step: float = 1e-3,
    order: int = 4,
    n_mels: int = 16,
    num_samples: int = 4080,
    num_classes: int = 8,
    label: int = 3,
) -> dict[str, float]:
    """Max relative gradient error per parameter group (encoder, each stage, distill, recovery, head).

    Uses the four-point central stencil by default: several weights have
    gradients near 1e-8 with large higher derivatives, where the two-point
    stencil's truncation and roundoff errors cannot both be pushed under 1e-3.
    """
    rng = Rng(seed)
    graph = GradcheckGraph(cfg, n_mels, num_classes, rng)
    mel = Tensor(mel_spectrogram(gradcheck_wave(num_samples, seed), n_mels).frames)

    def loss():
        return cross_entropy(graph(mel), label)

    return {
        name: grad_check(loss, params, step=step, vectorized=True, chunk=32, order=order)
        for name, params in graph.groups().items()
    }
