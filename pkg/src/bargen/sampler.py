"""Progressive bit-unmasking generation with classifier-free guidance.

One token is generated by starting from a fully masked bit vector and, at
each schedule step, re-predicting every still-masked bit and committing a
fixed number of them. Committed-but-unselected bits are resampled at the
next step. Guidance extrapolates conditional away from unconditional bit
logits; the linear schedule ramps the scale across token positions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch

from .errors import DomainError, ScheduleError
from .masking import UnmaskSchedule
from .model import Generator

SELECTION_KINDS = ("confidence", "random_order")
GUIDANCE_SCHEDULES = ("constant", "linear")
TEMPERATURE_MODES = ("logit", "gumbel_confidence")


@dataclass(frozen=True)
class SampleConfig:
    schedule: UnmaskSchedule
    temperature: float = 1.0
    guidance_scale: float = 0.0
    guidance_schedule: str = "linear"
    selection: str = "confidence"
    seed: int = 0
    temperature_mode: str = "logit"

    def __post_init__(self):
        if self.temperature <= 0:
            raise DomainError(f"temperature must be > 0, got {self.temperature}")
        if self.guidance_scale < 0:
            raise DomainError("guidance scale must be >= 0")
        if self.selection not in SELECTION_KINDS:
            raise DomainError(f"selection must be one of {SELECTION_KINDS}")
        if self.guidance_schedule not in GUIDANCE_SCHEDULES:
            raise DomainError(f"guidance schedule must be one of {GUIDANCE_SCHEDULES}")
        if self.temperature_mode not in TEMPERATURE_MODES:
            raise DomainError(f"temperature mode must be one of {TEMPERATURE_MODES}")


@dataclass
class GenerationTrace:
    """Per-position record of when each bit was revealed and with what
    confidence. ``reveal_step[b, j]`` is the schedule step that committed
    bit j of sequence b; the steps partition the bit positions."""

    reveal_step: torch.Tensor
    confidence: torch.Tensor
    sampled_bits: torch.Tensor


def cfg_combine(cond: torch.Tensor, uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """uncond + scale * (cond - uncond), elementwise."""
    if cond.shape != uncond.shape:
        raise DomainError("conditional and unconditional logits must match in shape")
    return uncond + scale * (cond - uncond)


def guidance_at(base_scale: float, i: int, n: int, schedule: str = "linear") -> float:
    """Guidance scale for token index i of n (linear ramp up to base)."""
    if n < 1:
        raise DomainError("sequence length must be >= 1")
    if schedule == "constant":
        return base_scale
    return base_scale * (i + 1) / n


def sample_token(
    model: Generator,
    z: torch.Tensor,
    z_null: torch.Tensor | None,
    cfg: SampleConfig,
    rng: torch.Generator,
    scale: float | None = None,
) -> tuple[torch.Tensor, GenerationTrace]:
    """Generate one bit token per row of ``z`` via progressive unmasking.

    ``z_null`` must be present iff guidance is active (scale > 0).
    """
    k = model.cfg.k
    if model.cfg.head_kind != "mbm":
        raise DomainError("progressive unmasking requires the mbm head")
    if cfg.schedule.bit_width != k:
        raise ScheduleError(
            f"schedule is for {cfg.schedule.bit_width} bits, model has k={k}"
        )
    if scale is None:
        scale = cfg.guidance_scale
    guided = scale > 0
    if guided and z_null is None:
        raise DomainError("guidance requires an unconditional condition vector")

    b = z.shape[0]
    bits = torch.zeros(b, k, dtype=torch.long)
    mask = torch.ones(b, k, dtype=torch.bool)
    reveal_step = torch.full((b, k), -1, dtype=torch.long)
    confidence = torch.zeros(b, k, dtype=z.dtype)
    rows = torch.arange(b)[:, None]
    neg_inf = torch.tensor(float("-inf"), dtype=z.dtype)

    for step_idx, n_step in enumerate(cfg.schedule.steps):
        logits = model.head(bits, mask, z)
        if guided:
            logits = cfg_combine(logits, model.head(bits, mask, z_null), scale)
        if cfg.temperature_mode == "logit":
            sample_logits = logits / cfg.temperature
        else:
            sample_logits = logits
        probs = torch.sigmoid(sample_logits)
        u = torch.rand(b, k, generator=rng, dtype=z.dtype)
        sampled = (u < probs).long()

        conf = logits.abs()
        if cfg.selection == "confidence":
            score = conf
            if cfg.temperature_mode == "gumbel_confidence":
                g = torch.rand(b, k, generator=rng, dtype=z.dtype)
                score = score - cfg.temperature * torch.log(-torch.log(g))
        else:
            score = torch.rand(b, k, generator=rng, dtype=z.dtype)
        score = torch.where(mask, score, neg_inf)
        # stable sort: ties resolve toward the lower bit position
        order = torch.argsort(score, dim=-1, descending=True, stable=True)
        chosen = order[:, :n_step]

        bits[rows, chosen] = sampled[rows, chosen]
        mask[rows, chosen] = False
        reveal_step[rows, chosen] = step_idx
        confidence[rows, chosen] = conf[rows, chosen]

    trace = GenerationTrace(reveal_step, confidence, bits.clone())
    return bits.to(torch.uint8), trace


def generate_sequence(
    model: Generator,
    class_id: int,
    n_tokens: int,
    cfg: SampleConfig,
    batch: int = 1,
    use_cache: bool = True,
):
    """Autoregressively generate ``n_tokens`` bit tokens per sequence.

    Returns ``(tokens, stats, traces)`` with tokens of shape
    (batch, n_tokens, k). ``use_cache=False`` recomputes the whole prefix at
    every step; both paths consume the rng identically and must agree.
    """
    mcfg = model.cfg
    if n_tokens < 1:
        raise DomainError("n_tokens must be >= 1")
    if mcfg.class_repeat + n_tokens > mcfg.context_len:
        raise DomainError(
            f"{n_tokens} tokens exceed context length {mcfg.context_len}"
        )
    guided = cfg.guidance_scale > 0
    rng = torch.Generator().manual_seed(cfg.seed)
    class_ids = torch.full((batch,), class_id, dtype=torch.long)
    null_ids = torch.full((batch,), mcfg.null_class, dtype=torch.long)

    tokens = []
    traces = []
    head_calls = 0
    start = time.perf_counter()
    with torch.no_grad():
        if use_cache:
            z, cache = model.backbone.prefill(class_ids)
            if guided:
                z_null, cache_null = model.backbone.prefill(null_ids)
        for i in range(n_tokens):
            if not use_cache:
                prev = (
                    torch.stack(tokens, dim=1)
                    if tokens
                    else torch.zeros(batch, 0, mcfg.k, dtype=torch.uint8)
                )
                z = model.backbone(prev, class_ids)[:, -1, :]
                if guided:
                    z_null = model.backbone(prev, null_ids)[:, -1, :]
            scale = (
                guidance_at(cfg.guidance_scale, i, n_tokens, cfg.guidance_schedule)
                if guided
                else 0.0
            )
            bits, trace = sample_token(
                model, z, z_null if guided else None, cfg, rng, scale=scale
            )
            head_calls += len(cfg.schedule) * (2 if guided else 1)
            tokens.append(bits)
            traces.append(trace)
            if use_cache and i < n_tokens - 1:
                z = model.backbone.step(bits, cache)
                if guided:
                    z_null = model.backbone.step(bits, cache_null)
    elapsed = time.perf_counter() - start

    out = torch.stack(tokens, dim=1)
    stats = {
        "n_sequences": batch,
        "n_tokens": n_tokens,
        "bits_per_token": mcfg.k,
        "wall_time_sec": elapsed,
        "tokens_per_sec": batch * n_tokens / elapsed if elapsed > 0 else float("inf"),
        "head_calls_per_token": head_calls / n_tokens,
    }
    return out, stats, traces
