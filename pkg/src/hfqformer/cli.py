"""``hfq`` command-line entry point.

Exit codes: 0 success, 2 validation or format error, 3 numeric or training failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import cost
from .checkpoint import read_checkpoint, save_checkpoint, write_atomic
from .errors import ContractError, HfqError, SchemaError, TrainingError
from .frontend import ToyEncoder, mel_spectrogram, read_features, read_wav, write_features
from .hfq import HfqConfig, HfqFormer, attention_mass_per_stage, compress_long_form, count_parameters
from .prompt import LANGUAGES, TASKS, PromptSpec, format_prompt
from .rng import Rng
from .tensor import Tensor, no_grad
from .toy import GRADCHECK_THRESHOLD, ToyTaskSpec, run_gradcheck, train_toy

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def default_seed() -> int:
    return int(os.environ.get("HFQ_SEED", "0"))


def load_config(args) -> HfqConfig:
    source = getattr(args, "config", None) or "desk"
    if source == "desk":
        cfg = HfqConfig.desk()
    elif source == "paper":
        cfg = HfqConfig.paper()
    else:
        cfg = HfqConfig.load(source)
    overrides = {
        "num_stages": getattr(args, "num_stages", None),
        "attention_mode": getattr(args, "attention_mode", None),
        "heads": getattr(args, "heads", None),
    }
    cfg = cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
    print(json.dumps({"effective_config": cfg.to_dict()}, sort_keys=True), file=sys.stderr)
    return cfg


def load_into(module, path) -> None:
    """Fill ``module`` from a checkpoint that may also hold other modules' tensors."""
    stored = read_checkpoint(path)
    expected = dict(module.named_tensors())
    for name, tensor in expected.items():
        if name not in stored:
            raise SchemaError(f"checkpoint {path} is missing tensor {name!r}")
        if stored[name].shape != tensor.shape:
            raise SchemaError(f"tensor {name!r} has shape {stored[name].shape}, model expects {tensor.shape}")
    for name, tensor in expected.items():
        tensor.data = stored[name].copy()


def write_text(path, text: str) -> None:
    write_atomic(path, text.encode("utf-8"))


def _floats(a: np.ndarray) -> list:
    return np.asarray(a, dtype=np.float64).round(8).tolist()


# -- subcommands ---------------------------------------------------------------


def cmd_featurize(args) -> int:
    mel = mel_spectrogram(read_wav(args.wav), args.n_mels)
    if args.mel_only:
        write_features(args.out, mel.frames)
        return EXIT_OK
    cfg = load_config(args)
    encoder = ToyEncoder(args.n_mels, cfg.d_model, Rng(args.seed))
    if args.checkpoint:
        load_into(encoder, args.checkpoint)
    with no_grad():
        feats = encoder(mel).data
    write_features(args.out, feats)
    return EXIT_OK


def _model(args, cfg) -> HfqFormer:
    model = HfqFormer(cfg, seed=args.seed)
    if args.checkpoint:
        load_into(model, args.checkpoint)
    return model


def cmd_compress(args) -> int:
    cfg = load_config(args)
    model = _model(args, cfg)
    feats = read_features(args.features)
    windows, diags = compress_long_form(model, feats, workers=args.workers, with_diagnostics=True)
    payload = {
        "config": cfg.to_dict(),
        "num_windows": len(windows),
        "total_tokens": sum(w.count for w in windows),
        "windows": [
            {
                "window_index": w.window_index,
                "source_duration_sec": w.source_duration_sec,
                "stage_attention_mass": _floats(
                    attention_mass_per_stage(d.distill_weights, cfg.num_stages, cfg.queries_per_stage)
                ),
                "tokens": _floats(w.tokens.data),
            }
            for w, d in zip(windows, diags)
        ],
    }
    write_text(args.out, json.dumps(payload) + "\n")
    return EXIT_OK


def cmd_attn_map(args) -> int:
    cfg = load_config(args)
    model = _model(args, cfg)
    _, diags = compress_long_form(model, read_features(args.features), with_diagnostics=True)
    lines = ["window_index,stage,mass"]
    for i, d in enumerate(diags):
        masses = attention_mass_per_stage(d.distill_weights, cfg.num_stages, cfg.queries_per_stage)
        lines += [f"{i},{s + 1},{m:.8f}" for s, m in enumerate(masses)]
    write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_cost(args) -> int:
    report = cost.cost_report(
        cost.get_adapter(args.adapter), cost.get_llm(args.llm), args.duration, args.prompt_tokens
    )
    text = json.dumps(report.to_dict(), indent=2) + "\n"
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_durations(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise cost.DomainError(f"durations must be comma-separated numbers, got {text!r}") from None


def cmd_bench(args) -> int:
    names = list(cost.ADAPTERS) if args.adapters == "all" else args.adapters.split(",")
    adapters = [cost.get_adapter(n) for n in names]
    rows = cost.scaling_sweep(cost.get_llm(args.llm), adapters, _parse_durations(args.durations))
    text = cost.sweep_csv(rows)
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    cfg = load_config(args)
    task = ToyTaskSpec(
        num_classes=args.num_classes,
        examples_per_class=args.examples_per_class,
        seed=args.seed,
        steps=args.steps,
        learning_rate=args.lr,
    )
    log, model = train_toy(task, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "train_log.csv", log.to_csv())
    save_checkpoint(model, out / "checkpoint.hfqc")
    summary = {
        "initial_loss": log.initial_loss,
        "final_loss": log.final_loss,
        "heldout_accuracy": log.accuracy,
        "steps": task.steps,
    }
    write_text(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = load_config(args)
    report = run_gradcheck(cfg, seed=args.seed, step=args.step, order=args.order)
    failed = False
    for group, err in report.items():
        ok = err < GRADCHECK_THRESHOLD
        failed |= not ok
        print(f"{group:10s} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_prompt(args) -> int:
    spec = PromptSpec(
        task=args.task,
        language=args.language,
        user_text=args.text,
        include_language_tag=not args.no_language_tag,
        include_task_tag=not args.no_task_tag,
    )
    sys.stdout.write(format_prompt(spec) + "\n")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = load_config(args)
    print(count_parameters(cfg))
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _config_flags(p):
    p.add_argument("--config", help="JSON config path, or the preset names 'desk' / 'paper' (default desk)")
    p.add_argument("--num-stages", type=int, choices=(1, 2, 3))
    p.add_argument("--attention-mode", choices=("literal_eq1", "projected"))
    p.add_argument("--heads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hfq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    seed = dict(type=int, default=None, help="seed (default: $HFQ_SEED or 0)")

    p = sub.add_parser("featurize", help="WAV -> mel or encoder features (.f32)")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mel-only", action="store_true")
    p.add_argument("--n-mels", type=int, default=16)
    p.add_argument("--checkpoint")
    p.add_argument("--seed", **seed)
    _config_flags(p)
    p.set_defaults(func=cmd_featurize)

    for name, func, help_ in (
        ("compress", cmd_compress, "features -> compressed tokens JSON"),
        ("attn-map", cmd_attn_map, "features -> per-stage attention mass CSV"),
    ):
        p = sub.add_parser(name, help=help_)
        _config_flags(p)
        p.add_argument("--features", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--checkpoint", required=name == "attn-map")
        p.add_argument("--seed", **seed)
        if name == "compress":
            p.add_argument("--workers", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("cost", help="token count, FLOPs and KV bytes for one duration")
    p.add_argument("--adapter", default="hfq")
    p.add_argument("--duration", type=float, required=True)
    p.add_argument("--llm", default="qwen3-4b-like")
    p.add_argument("--prompt-tokens", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("bench", help="analytical scaling sweep as CSV")
    p.add_argument("--durations", default="60,300,1800,28800")
    p.add_argument("--adapters", default="all")
    p.add_argument("--llm", default="qwen3-4b-like")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-toy", help="train the toy classifier with SGD")
    _config_flags(p)
    p.add_argument("--seed", **seed)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--num-classes", type=int, default=8)
    p.add_argument("--examples-per-class", type=int, default=64)
    p.add_argument("--out-dir", default="toy_run")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    _config_flags(p)
    p.add_argument("--seed", **seed)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--order", type=int, choices=(2, 4), default=4, help="central stencil points")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("prompt", help="render the LLM prompt template")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--language", choices=LANGUAGES, required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--no-language-tag", action="store_true")
    p.add_argument("--no-task-tag", action="store_true")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("params", help="trainable parameter count of the compressor")
    _config_flags(p)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", 0) is None:
        args.seed = default_seed()
    try:
        return args.func(args)
    except (TrainingError, ContractError, FloatingPointError) as exc:
        print(f"hfq: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (HfqError, ValueError, OSError) as exc:
        print(f"hfq: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
