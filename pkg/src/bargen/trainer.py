"""Deterministic desk-scale training loop for all three head kinds.

Optimizer: decoupled-weight-decay Adam with global gradient-norm clipping.
Learning rate: linear warmup from 0 to the peak, then cosine decay to
``end_lr``. Every run is bit-reproducible given its seed.
"""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_model, save_model
from .configs import ExperimentConfig, TrainConfig
from .errors import ConfigError, TrainingError
from .masking import RatioStrategy, sample_mask_ratios
from .model import Generator, loss_linear
from .synthetic import gen_token_dataset, make_markov_task


def lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Learning rate at ``step`` of ``total_steps``; exact endpoints:
    lr(0) = 0 (when warming up), lr(warmup boundary) = peak,
    lr(total) = end_lr."""
    if step < 0 or step > total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return cfg.learning_rate
    warmup = total_steps * cfg.warmup_epochs / max(cfg.epochs, 1)
    if warmup > 0 and step < warmup:
        return cfg.learning_rate * step / warmup
    if total_steps == warmup:
        return cfg.learning_rate
    progress = (step - warmup) / (total_steps - warmup)
    cos = 0.5 * (1.0 + math.cos(math.pi * progress))
    return cfg.end_lr + (cfg.learning_rate - cfg.end_lr) * cos


def make_optimizer(model: Generator, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=(cfg.beta1, cfg.beta2),
        weight_decay=cfg.weight_decay,
    )


def sample_bit_masks(shape_bt: tuple, k: int, strategy: RatioStrategy,
                     rng: np.random.Generator) -> np.ndarray:
    """One fresh mask ratio per target token; exactly round(ratio*k) hidden
    positions per token, uniform without replacement."""
    ratios = sample_mask_ratios(strategy, shape_bt, rng)
    counts = np.minimum(k, np.floor(ratios * k + 0.5).astype(np.int64))
    noise = rng.random(shape_bt + (k,))
    ranks = np.argsort(np.argsort(noise, axis=-1), axis=-1)
    return ranks < counts[..., None]


def batch_loss(
    model: Generator,
    tokens: torch.Tensor,
    classes: torch.Tensor,
    strategy: RatioStrategy,
    rng: np.random.Generator,
    loss_support: str = "masked",
):
    """Loss for one batch of (B, n, k) tokens: mean over target positions of
    the per-token bit (or vocabulary) cross-entropy, in nats."""
    cfg = model.cfg
    z = model.backbone(tokens, classes)[:, :-1, :]  # condition for token t
    if cfg.head_kind == "mbm":
        mask_np = sample_bit_masks(tuple(tokens.shape[:2]), cfg.k, strategy, rng)
        mask = torch.from_numpy(mask_np)
        logits = model.head(tokens.long(), mask, z)
        counted = mask if loss_support == "masked" else torch.ones_like(mask)
        bce = torch.nn.functional.binary_cross_entropy_with_logits(
            logits, tokens.to(logits.dtype), reduction="none"
        )
        per_token = (bce * counted).sum(dim=-1)
        counts = counted.sum(dim=-1)
        valid = counts > 0
        if not bool(valid.any()):
            return logits.sum() * 0.0
        return (per_token[valid] / counts[valid]).mean()
    logits = model.head(z)
    if cfg.head_kind == "bit":
        bce = torch.nn.functional.binary_cross_entropy_with_logits(
            logits, tokens.to(logits.dtype), reduction="none"
        )
        return bce.mean()
    shifts = torch.arange(cfg.k, dtype=torch.long)
    indices = (tokens.long() << shifts).sum(dim=-1)
    return loss_linear(logits, indices)


def train_step(
    model: Generator,
    optimizer: torch.optim.Optimizer,
    tokens: torch.Tensor,
    classes: torch.Tensor,
    strategy: RatioStrategy,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """One update; returns the pre-update loss."""
    if cfg.label_dropout > 0:
        drop = rng.random(classes.shape[0]) < cfg.label_dropout
        classes = torch.where(
            torch.from_numpy(drop),
            torch.full_like(classes, model.cfg.null_class),
            classes,
        )
    loss = batch_loss(model, tokens, classes, strategy, rng, cfg.loss_support)
    if not torch.isfinite(loss):
        raise TrainingError(
            "non-finite training loss",
            diagnostics={
                "loss": float(loss.detach()),
                "grad_norms": {
                    n: float(p.grad.norm()) if p.grad is not None else None
                    for n, p in model.named_parameters()
                },
            },
        )
    optimizer.zero_grad()
    loss.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
    optimizer.step()
    return float(loss.detach())


def run_experiment(
    exp: ExperimentConfig,
    out_dir,
    resume_from=None,
    eval_fn=None,
    stop_after_epoch=None,
) -> dict:
    """Full training loop: periodic evaluation, JSON-lines metrics, and a
    final checkpoint (plus a resume sidecar with optimizer and rng state).

    Returns a summary dict with the final metrics and artifact paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tcfg = exp.train

    task = make_markov_task(
        k=exp.model.k,
        seq_len=exp.task.seq_len,
        class_count=exp.model.class_count,
        block_bits=exp.task.block_bits or None,
        determinism=exp.task.determinism,
        seed=exp.task.task_seed,
    )
    tokens_np, classes_np = gen_token_dataset(
        task, exp.task.dataset_size + exp.task.heldout_size, exp.task.task_seed
    )
    split = exp.task.dataset_size
    train_tokens = torch.from_numpy(tokens_np[:split])
    train_classes = torch.from_numpy(classes_np[:split])
    held_tokens = torch.from_numpy(tokens_np[split:])
    held_classes = torch.from_numpy(classes_np[split:])

    torch.manual_seed(tcfg.seed)
    model = Generator(exp.model)
    optimizer = make_optimizer(model, tcfg)
    rng = np.random.default_rng(tcfg.seed)
    start_epoch = 0
    if resume_from is not None:
        model = load_model(resume_from)
        optimizer = make_optimizer(model, tcfg)
        sidecar = torch.load(
            str(resume_from) + ".resume", weights_only=False
        )
        optimizer.load_state_dict(sidecar["optimizer"])
        rng.bit_generator.state = sidecar["np_rng"]
        torch.set_rng_state(sidecar["torch_rng"])
        start_epoch = sidecar["epoch"]

    n_train = train_tokens.shape[0]
    steps_per_epoch = max(1, n_train // tcfg.batch_size)
    total_steps = steps_per_epoch * tcfg.epochs
    metrics_path = out_dir / "metrics.jsonl"
    ckpt_path = out_dir / "checkpoint.barc"
    losses = []

    end_epoch = tcfg.epochs if stop_after_epoch is None else stop_after_epoch
    mode = "a" if resume_from is not None else "w"
    with open(metrics_path, mode, encoding="utf-8") as log:
        step = start_epoch * steps_per_epoch
        for epoch in range(start_epoch, end_epoch):
            t0 = time.perf_counter()
            order = rng.permutation(n_train)
            epoch_losses = []
            for b in range(steps_per_epoch):
                idx = order[b * tcfg.batch_size : (b + 1) * tcfg.batch_size]
                lr = lr_at(tcfg, step, total_steps)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                loss = train_step(
                    model,
                    optimizer,
                    train_tokens[idx],
                    train_classes[idx],
                    exp.mask_strategy,
                    tcfg,
                    rng,
                )
                epoch_losses.append(loss)
                step += 1
            losses.extend(epoch_losses)
            record = {
                "epoch": epoch,
                "step": step,
                "loss": float(np.mean(epoch_losses)),
                "lr": lr_at(tcfg, step, total_steps),
                "wall_time_sec": time.perf_counter() - t0,
            }
            if eval_fn is not None:
                record.update(eval_fn(model, held_tokens, held_classes))
            log.write(json.dumps(record) + "\n")

    save_model(model, ckpt_path)
    torch.save(
        {
            "optimizer": optimizer.state_dict(),
            "np_rng": rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "epoch": end_epoch,
        },
        str(ckpt_path) + ".resume",
    )
    return {
        "checkpoint": str(ckpt_path),
        "metrics": str(metrics_path),
        "losses": losses,
        "heldout": (held_tokens, held_classes),
        "model": model,
    }
