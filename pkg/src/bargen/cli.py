"""Command-line entry point.

Subcommands: budget, tokenize, train, sample, eval, compare-heads,
plot-data. All outputs land under a user-supplied --out / --out-dir; the
BAR_SEED environment variable overrides any configured seed. Exit codes:
0 success, 2 config error, 3 capability error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .bitcodec import save_token_grid
from .budget import BudgetQuery, bit_budget_continuous, bit_budget_discrete
from .checkpoint import load_model
from .configs import load_config
from .errors import BargenError, ConfigError
from .experiments import (
    emit_plot_data,
    head_comparison_experiment,
    heldout_nll,
    save_report,
    token_accuracy_greedy,
)
from .fsq import FsqConfig
from .masking import parse_schedule
from .sampler import SampleConfig, generate_sequence
from .synthetic import SyntheticTask, gen_image_dataset
from .toyae import train_toy_autoencoder, write_ppm
from .trainer import run_experiment


def _env_seed(default: int) -> int:
    raw = os.environ.get("BAR_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"BAR_SEED must be an integer, got {raw!r}") from e


def cmd_budget(args) -> int:
    rows = []
    with open(args.config, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ConfigError(
                    f"{args.config}:{lineno}: expected "
                    f"'name kind H W f value', got {raw!r}"
                )
            name, kind, h, w, f_, value = parts
            try:
                h, w, f_, value = int(h), int(w), int(f_), int(value)
            except ValueError as e:
                raise ConfigError(f"{args.config}:{lineno}: {e}") from e
            if kind == "discrete":
                bits = bit_budget_discrete(BudgetQuery(h, w, f_, k=value))
            elif kind == "continuous":
                bits = bit_budget_continuous(BudgetQuery(h, w, f_, d=value))
            else:
                raise ConfigError(
                    f"{args.config}:{lineno}: kind must be discrete|continuous"
                )
            rows.append((name, h, w, f_, value, bits))
    print("name\tH\tW\tf\tk_or_D\tbits")
    for row in rows:
        print("\t".join(str(v) for v in row))
    return 0


def cmd_tokenize(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = _env_seed(args.seed)
    task = SyntheticTask(kind=args.task, class_count=args.classes)
    images, _ = gen_image_dataset(task, args.images, seed)
    cfg = FsqConfig(channels_per_token=args.k, downsample_factor=args.f)
    model, curve, final_mse = train_toy_autoencoder(
        images, cfg, epochs=args.epochs, seed=seed
    )
    (out_dir / "recon_curve.tsv").write_text(
        "epoch\tmse\n"
        + "\n".join(f"{i}\t{m}" for i, m in enumerate(curve))
        + "\n",
        encoding="utf-8",
    )
    batch = torch.from_numpy(images[: args.dump])
    with torch.no_grad():
        recon = model(batch).numpy()
    for i in range(args.dump):
        write_ppm(images[i], out_dir / f"orig_{i}.ppm")
        write_ppm(recon[i], out_dir / f"recon_{i}.ppm")
    grids = model.tokenize(batch)
    save_token_grid(grids[0], out_dir / "sample_tokens.barg")
    print(f"final per-pixel MSE: {final_mse:.6f}")
    print(f"artifacts in {out_dir}")
    return 0


def _eval_metrics(model, tokens, classes):
    return {
        "heldout_nll_nats_per_token": heldout_nll(model, tokens, classes),
        "token_accuracy_greedy": token_accuracy_greedy(model, tokens, classes),
    }


def cmd_train(args) -> int:
    exp = load_config(args.config)
    seed = _env_seed(exp.train.seed)
    if seed != exp.train.seed:
        exp = replace(exp, train=replace(exp.train, seed=seed))
    result = run_experiment(
        exp, args.out_dir, resume_from=args.resume, eval_fn=_eval_metrics
    )
    print(f"checkpoint: {result['checkpoint']}")
    print(f"metrics:    {result['metrics']}")
    return 0


def cmd_sample(args) -> int:
    model = load_model(args.ckpt)
    seed = _env_seed(args.seed)
    cfg = SampleConfig(
        schedule=parse_schedule(args.schedule, model.cfg.k),
        temperature=args.temp,
        guidance_scale=args.cfg,
        seed=seed,
    )
    tokens, stats, _ = generate_sequence(
        model, args.class_id, args.n, cfg, batch=args.batch
    )
    h, w = _grid_shape(args.grid, args.n)
    from .bitcodec import TokenGrid

    grid = TokenGrid(tokens[0].numpy().reshape(h, w, model.cfg.k))
    save_token_grid(grid, args.out)
    with open(str(args.out) + ".stats.jsonl", "w", encoding="utf-8") as f:
        f.write(json.dumps(stats) + "\n")
    print(f"tokens: {args.out}")
    print(f"stats:  {args.out}.stats.jsonl")
    return 0


def _grid_shape(grid_arg, n):
    if grid_arg:
        h, _, w = grid_arg.partition("x")
        h, w = int(h), int(w)
        if h * w != n:
            raise ConfigError(f"grid {h}x{w} does not hold {n} tokens")
        return h, w
    root = int(np.sqrt(n))
    return (root, n // root) if root * root == n else (1, n)


def cmd_eval(args) -> int:
    model = load_model(args.ckpt)
    exp = load_config(args.config)
    from .synthetic import gen_token_dataset, make_markov_task

    task = make_markov_task(
        k=model.cfg.k,
        seq_len=exp.task.seq_len,
        class_count=model.cfg.class_count,
        block_bits=exp.task.block_bits or None,
        determinism=exp.task.determinism,
        seed=exp.task.task_seed,
    )
    tokens_np, classes_np = gen_token_dataset(
        task, exp.task.heldout_size, exp.task.task_seed + 1
    )
    metrics = _eval_metrics(
        model, torch.from_numpy(tokens_np), torch.from_numpy(classes_np)
    )
    text = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_compare_heads(args) -> int:
    k_list = [int(v) for v in args.k.split(",")]
    seeds = [int(v) for v in args.seeds.split(",")]
    report = head_comparison_experiment(
        k_list, seeds, out_dir=args.out_dir, epochs=args.epochs
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_report(report, out_dir / "report.json")
    emit_plot_data(report, out_dir)
    print(f"report: {out_dir / 'report.json'}")
    return 0


def cmd_plot_data(args) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    written = emit_plot_data(report, args.out_dir)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bargen",
        description="Desk-scale masked bit autoregressive modeling toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("budget", help="bit-budget table for tokenizer configs")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("tokenize", help="train the toy FSQ autoencoder")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--f", type=int, default=4)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--images", type=int, default=64)
    p.add_argument("--dump", type=int, default=4)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--task", default="toy_images",
                   choices=("toy_images", "checker_textures"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("train", help="run a training experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate token grids from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--class", dest="class_id", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--schedule", default="4,4,4,4")
    p.add_argument("--temp", type=float, default=2.0)
    p.add_argument("--cfg", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--grid", default=None, help="HxW layout for the output")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="held-out metrics for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare-heads", help="linear/bit/mbm head study")
    p.add_argument("--k", default="4,8")
    p.add_argument("--seeds", default="0")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_compare_heads)

    p = sub.add_parser("plot-data", help="emit TSV plot data from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plot_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BargenError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
