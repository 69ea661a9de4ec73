"""Evaluation metrics and baseline-comparison experiments.

Held-out NLL is reported in nats/token for every head kind on a common
footing: the linear head's categorical NLL is exact; the bit head's NLL is
the sum of its independent per-bit terms; the MBM head is scored by the
exact NLL of its deterministic position-order unmasking chain (one bit per
step, positions revealed low to high), which is a distribution the sampler
can actually realize.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .configs import ExperimentConfig, TaskConfig, TrainConfig
from .errors import CapabilityError
from .masking import RatioStrategy
from .model import (
    Generator,
    ModelConfig,
    bit_param_count,
    linear_param_count,
    loss_linear,
    mbm_param_count,
)
from .trainer import run_experiment

HEAD_KINDS_COMPARED = ("linear", "bit", "mbm")


def _conditions(model, tokens, classes):
    with torch.no_grad():
        return model.backbone(tokens, classes)[:, :-1, :]


def mbm_chain_nll(model: Generator, tokens, classes) -> float:
    """Exact NLL (nats/token) of the fixed low-to-high bit-order chain:
    bit j is predicted with positions j..k-1 still masked."""
    k = model.cfg.k
    z = _conditions(model, tokens, classes)
    total = 0.0
    mask = torch.zeros(tokens.shape, dtype=torch.bool)
    with torch.no_grad():
        for j in range(k):
            mask[:] = False
            mask[..., j:] = True
            logits = model.head(tokens.long(), mask, z)
            total += float(
                F.binary_cross_entropy_with_logits(
                    logits[..., j], tokens[..., j].to(logits.dtype), reduction="sum"
                )
            )
    return total / (tokens.shape[0] * tokens.shape[1])


def heldout_nll(model: Generator, tokens, classes) -> float:
    """Held-out NLL in nats/token for the model's head kind."""
    kind = model.cfg.head_kind
    if kind == "mbm":
        return mbm_chain_nll(model, tokens, classes)
    z = _conditions(model, tokens, classes)
    with torch.no_grad():
        logits = model.head(z)
        if kind == "bit":
            return float(
                F.binary_cross_entropy_with_logits(
                    logits, tokens.to(logits.dtype), reduction="sum"
                )
            ) / (tokens.shape[0] * tokens.shape[1])
        shifts = torch.arange(model.cfg.k, dtype=torch.long)
        indices = (tokens.long() << shifts).sum(dim=-1)
        return float(loss_linear(logits, indices))


def token_accuracy_greedy(model: Generator, tokens, classes) -> float:
    """Teacher-forced greedy token accuracy: every bit of every next token
    must be predicted correctly."""
    kind = model.cfg.head_kind
    k = model.cfg.k
    z = _conditions(model, tokens, classes)
    with torch.no_grad():
        if kind == "linear":
            shifts = torch.arange(k, dtype=torch.long)
            indices = (tokens.long() << shifts).sum(dim=-1)
            pred = model.head(z).argmax(dim=-1)
            return float((pred == indices).float().mean())
        if kind == "bit":
            pred = (model.head(z) > 0).to(torch.uint8)
            return float((pred == tokens).all(dim=-1).float().mean())
        pred = torch.zeros_like(tokens, dtype=torch.long)
        mask = torch.ones(tokens.shape, dtype=torch.bool)
        for j in range(k):
            logits = model.head(pred, mask, z)
            pred[..., j] = (logits[..., j] > 0).long()
            mask[..., j] = False
        return float((pred.to(torch.uint8) == tokens).all(dim=-1).float().mean())


def head_param_count(cfg: ModelConfig) -> int:
    if cfg.head_kind == "mbm":
        return mbm_param_count(cfg)
    if cfg.head_kind == "linear":
        return linear_param_count(cfg)
    return bit_param_count(cfg)


def comparison_config(
    k: int, head_kind: str, seed: int, epochs: int = 12
) -> ExperimentConfig:
    """Small shared recipe for the head-comparison study."""
    return ExperimentConfig(
        model=ModelConfig(
            depth=2,
            width=64,
            ffn_width=128,
            heads=2,
            k=k,
            head_kind=head_kind,
            head_layers=3,
            head_width=64,
            class_count=4,
            context_len=32,
        ),
        train=TrainConfig(
            learning_rate=2e-3,
            batch_size=64,
            epochs=epochs,
            warmup_epochs=1,
            seed=seed,
            weight_decay=0.0,
        ),
        task=TaskConfig(seq_len=6, dataset_size=1024, heldout_size=256),
        mask_strategy=RatioStrategy("logit_normal"),
    )


def head_comparison_experiment(
    k_list, seeds, out_dir=None, epochs: int = 12, heads=HEAD_KINDS_COMPARED
) -> dict:
    """Train linear / bit / mbm heads per k on the shared synthetic task and
    report held-out NLL, parameter counts and wall time. Infeasible linear
    configurations are reported as capability-error rows, not crashes."""
    cells = []
    for k in k_list:
        for head_kind in heads:
            for seed in seeds:
                try:
                    exp = comparison_config(k, head_kind, seed, epochs=epochs)
                except CapabilityError as e:
                    cells.append(
                        {
                            "k": k,
                            "head": head_kind,
                            "seed": seed,
                            "error": f"capability: {e}",
                        }
                    )
                    continue
                t0 = time.perf_counter()
                scratch = Path(out_dir or ".") / f"cell_k{k}_{head_kind}_s{seed}"
                result = run_experiment(exp, scratch)
                model = result["model"]
                held_tokens, held_classes = result["heldout"]
                cells.append(
                    {
                        "k": k,
                        "head": head_kind,
                        "seed": seed,
                        "nll_nats_per_token": heldout_nll(
                            model, held_tokens, held_classes
                        ),
                        "head_params": head_param_count(exp.model),
                        "head_params_measured": sum(
                            p.numel() for p in model.head.parameters()
                        ),
                        "wall_time_sec": time.perf_counter() - t0,
                    }
                )
    return {"kind": "head_comparison", "cells": cells}


def throughput_experiment(
    grid: int = 8,
    k: int = 16,
    patches=(1, 2),
    steps: int = 4,
    batch: int = 8,
    seed: int = 0,
) -> dict:
    """Generation throughput as a function of token-shuffling patch size.

    Patch size p turns the (grid x grid, k-bit) layout into
    (grid/p x grid/p, k*p^2-bit) tokens. ``base_tokens_per_sec`` counts
    throughput in unshuffled-token units so layouts are comparable.
    """
    from .masking import make_schedule
    from .sampler import SampleConfig, generate_sequence

    rows = []
    for p in patches:
        if grid % p:
            raise CapabilityError(f"patch {p} does not divide grid {grid}")
        n_tokens = (grid // p) ** 2
        bits = k * p * p
        torch.manual_seed(seed)
        model = Generator(
            ModelConfig(
                depth=2, width=128, ffn_width=256, heads=4, k=bits,
                head_layers=3, head_width=128, class_count=4,
                context_len=grid * grid + 1,
            )
        )
        cfg = SampleConfig(
            schedule=make_schedule(bits, "uniform_steps", steps),
            temperature=1.0,
            seed=seed,
        )
        # warm-up pass so allocator and kernel dispatch costs do not skew
        generate_sequence(model, 0, min(2, n_tokens), cfg, batch=batch)
        _, stats, _ = generate_sequence(model, 0, n_tokens, cfg, batch=batch)
        rows.append(
            (
                p,
                n_tokens,
                bits,
                stats["tokens_per_sec"],
                batch * grid * grid / stats["wall_time_sec"],
                stats["wall_time_sec"],
            )
        )
    return {"kind": "throughput", "throughput": rows}


def _write_tsv(path, header, rows):
    lines = ["\t".join(header)]
    lines += ["\t".join(str(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def emit_plot_data(report: dict, out_dir) -> list:
    """Write one TSV per figure family present in the report; deterministic
    and byte-identical on re-runs. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "cells" in report or report.get("kind") == "head_comparison":
        rows = [
            (
                c["k"],
                c["head"],
                c["seed"],
                c.get("nll_nats_per_token", ""),
                c.get("head_params", ""),
                c.get("error", ""),
            )
            for c in report["cells"]
        ]
        path = out_dir / "k_vs_nll.tsv"
        _write_tsv(path, ("k", "head", "seed", "nll_nats_per_token",
                          "head_params", "error"), rows)
        written.append(path)
    if "budget" in report:
        path = out_dir / "budget.tsv"
        _write_tsv(path, ("name", "H", "W", "f", "k_or_D", "bits"),
                   report["budget"])
        written.append(path)
    if "reconstruction" in report:
        path = out_dir / "bits_vs_mse.tsv"
        _write_tsv(path, ("k", "seed", "final_mse"), report["reconstruction"])
        written.append(path)
    if "schedules" in report:
        path = out_dir / "schedule_vs_nll.tsv"
        _write_tsv(path, ("schedule", "metric"), report["schedules"])
        written.append(path)
    if "throughput" in report:
        path = out_dir / "patchsize_vs_throughput.tsv"
        _write_tsv(
            path,
            ("patch", "tokens", "bits_per_token", "tokens_per_sec",
             "base_tokens_per_sec", "wall_time_sec"),
            report["throughput"],
        )
        written.append(path)
    return written


def save_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2), encoding="utf-8")
