"""Causal autoregressive backbone over bit tokens plus three interchangeable
prediction heads.

Backbone: pre-norm transformer with rotary position embeddings, RMSNorm and
gated (SwiGLU) feed-forward. The class condition is a learned embedding
prepended as the sequence prefix (repeat count configurable); a dedicated
null-class embedding supports classifier-free guidance.

Heads:
  * ``mbm``    masked-bit-modeling head: ``head_layers`` SwiGLU blocks whose
               normalization scale/shift/gate are generated from the backbone
               condition (adaptive layer norm); emits k Bernoulli logits.
               Parameters grow linearly in k.
  * ``linear`` affine map onto the full 2^k vocabulary; deliberately capped
               at k <= 18 (the feasibility boundary for materialized
               vocabularies).
  * ``bit``    one-shot affine map onto k Bernoulli logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CapabilityError, ConfigError, DomainError, ShapeError

HEAD_KINDS = ("mbm", "linear", "bit")
LINEAR_HEAD_MAX_BITS = 18
MASK_STATE = 2  # third row of the per-position bit embedding table


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 4
    width: int = 256
    ffn_width: int = 1024
    heads: int = 4
    k: int = 16
    head_kind: str = "mbm"
    head_layers: int = 3
    head_width: int = 256
    class_count: int = 16
    context_len: int = 512
    class_repeat: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {HEAD_KINDS}")
        if self.head_kind == "linear" and self.k > LINEAR_HEAD_MAX_BITS:
            raise CapabilityError(
                f"linear head materializes a 2^{self.k}-entry vocabulary; "
                f"capped at k <= {LINEAR_HEAD_MAX_BITS}"
            )
        if min(self.depth, self.k, self.head_layers, self.head_width,
               self.class_count, self.context_len, self.class_repeat) < 1:
            raise ConfigError("all size fields must be >= 1")

    @property
    def null_class(self) -> int:
        return self.class_count

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in d:
                kwargs[f.name] = type(getattr(cls, f.name))(d[f.name])
        return cls(**kwargs)


def _rotate_half(x):
    x1, x2 = x.chunk(2, dim=-1)
    return torch.cat((-x2, x1), dim=-1)


def _rope(q, k, positions, head_dim, base=10000.0):
    inv_freq = 1.0 / (
        base ** (torch.arange(0, head_dim, 2, dtype=q.dtype) / head_dim)
    )
    angles = positions.to(q.dtype)[:, None] * inv_freq[None, :]
    cos = torch.cat([angles.cos(), angles.cos()], dim=-1)
    sin = torch.cat([angles.sin(), angles.sin()], dim=-1)
    q = q * cos + _rotate_half(q) * sin
    k = k * cos + _rotate_half(k) * sin
    return q, k


class Attention(nn.Module):
    def __init__(self, width, heads, dropout):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, 3 * width, bias=False)
        self.proj = nn.Linear(width, width, bias=False)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, start_pos=0, cache=None):
        b, t, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        positions = torch.arange(start_pos, start_pos + t)
        q, k = _rope(q, k, positions, self.head_dim)
        if cache is not None:
            if cache["k"] is not None:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
            # new queries may attend to the whole cached prefix; causality
            # within the new chunk still applies when t > 1
            is_causal = t > 1 and k.shape[2] == t
        else:
            is_causal = t > 1
        out = F.scaled_dot_product_attention(q, k, v, is_causal=is_causal)
        out = out.transpose(1, 2).reshape(b, t, -1)
        return self.drop(self.proj(out))


class SwiGLU(nn.Module):
    def __init__(self, width, hidden, dropout=0.0):
        super().__init__()
        self.w1 = nn.Linear(width, hidden, bias=False)
        self.w2 = nn.Linear(width, hidden, bias=False)
        self.w3 = nn.Linear(hidden, width, bias=False)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.drop(self.w3(F.silu(self.w1(x)) * self.w2(x)))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.RMSNorm(cfg.width)
        self.attn = Attention(cfg.width, cfg.heads, cfg.dropout)
        self.norm2 = nn.RMSNorm(cfg.width)
        self.ffn = SwiGLU(cfg.width, cfg.ffn_width, cfg.dropout)

    def forward(self, x, start_pos=0, cache=None):
        x = x + self.attn(self.norm1(x), start_pos=start_pos, cache=cache)
        x = x + self.ffn(self.norm2(x))
        return x


class Backbone(nn.Module):
    """Maps a class prefix plus bit-token sequence to condition vectors.

    For an input of T tokens the forward pass returns T + 1 conditions:
    condition j is the hidden state that predicts token j + 1 (condition 0
    comes from the class prefix alone).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.class_embed = nn.Embedding(cfg.class_count + 1, cfg.width)
        self.token_in = nn.Linear(cfg.k, cfg.width, bias=False)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.depth))
        self.norm = nn.RMSNorm(cfg.width)

    def _check_classes(self, class_ids):
        if class_ids.min() < 0 or class_ids.max() > self.cfg.null_class:
            raise DomainError(
                f"class ids must lie in [0, {self.cfg.null_class}] "
                f"(index {self.cfg.null_class} is the null class)"
            )

    def _embed_tokens(self, bits):
        if bits.shape[-1] != self.cfg.k:
            raise ShapeError(f"expected {self.cfg.k}-bit tokens, got {bits.shape[-1]}")
        signs = bits.to(self.token_in.weight.dtype) * 2.0 - 1.0
        return self.token_in(signs)

    def forward(self, bits, class_ids):
        """Full (non-cached) pass. ``bits``: (B, T, k) in {0,1}; T may be 0."""
        class_ids = torch.as_tensor(class_ids)
        self._check_classes(class_ids)
        r = self.cfg.class_repeat
        prefix = self.class_embed(class_ids)[:, None, :].expand(-1, r, -1)
        if bits.shape[1]:
            x = torch.cat([prefix, self._embed_tokens(bits)], dim=1)
        else:
            x = prefix
        if x.shape[1] > self.cfg.context_len:
            raise DomainError(
                f"sequence length {x.shape[1]} exceeds context {self.cfg.context_len}"
            )
        for block in self.blocks:
            x = block(x)
        return self.norm(x)[:, r - 1 :, :]

    def new_cache(self):
        return [{"k": None, "v": None} for _ in self.blocks]

    def prefill(self, class_ids):
        """Start incremental decoding: run the class prefix, return the
        condition for token 1 plus the KV cache."""
        class_ids = torch.as_tensor(class_ids)
        self._check_classes(class_ids)
        r = self.cfg.class_repeat
        x = self.class_embed(class_ids)[:, None, :].expand(-1, r, -1)
        cache = self.new_cache()
        for block, c in zip(self.blocks, cache):
            x = block(x, start_pos=0, cache=c)
        return self.norm(x)[:, -1, :], cache

    def step(self, bits_t, cache):
        """Feed one accepted token; returns the next condition vector."""
        pos = cache[0]["k"].shape[2] if cache[0]["k"] is not None else 0
        if pos + 1 > self.cfg.context_len:
            raise DomainError(f"context overflow at position {pos}")
        x = self._embed_tokens(bits_t)[:, None, :]
        for block, c in zip(self.blocks, cache):
            x = block(x, start_pos=pos, cache=c)
        return self.norm(x)[:, -1, :]


class MbmBlock(nn.Module):
    """SwiGLU block with adaptive RMSNorm modulation generated from z."""

    def __init__(self, head_width, cond_width):
        super().__init__()
        self.norm = nn.RMSNorm(head_width, elementwise_affine=False)
        self.mod = nn.Linear(cond_width, 3 * head_width)
        self.mlp = SwiGLU(head_width, head_width)

    def forward(self, x, z):
        shift, scale, gate = self.mod(z).chunk(3, dim=-1)
        h = self.norm(x) * (1.0 + scale) + shift
        return x + gate * self.mlp(h)


class MbmHead(nn.Module):
    """Masked-bit-modeling head: iterative bit generator conditioned on z."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.k = cfg.k
        self.head_width = cfg.head_width
        # per position: embeddings for bit 0, bit 1 and the mask symbol
        self.bit_embed = nn.Parameter(torch.randn(cfg.k, 3, cfg.head_width) * 0.02)
        self.start = nn.Parameter(torch.zeros(cfg.head_width))
        self.blocks = nn.ModuleList(
            MbmBlock(cfg.head_width, cfg.width) for _ in range(cfg.head_layers)
        )
        self.norm_out = nn.RMSNorm(cfg.head_width, elementwise_affine=False)
        self.mod_out = nn.Linear(cfg.width, 2 * cfg.head_width)
        self.out = nn.Linear(cfg.head_width, cfg.k)

    def embed_masked(self, bits, mask):
        """Sum of per-position embeddings; masked positions contribute the
        mask-symbol embedding regardless of the underlying bit."""
        if bits.shape[-1] != self.k or mask.shape != bits.shape:
            raise ShapeError(
                f"expected bits/mask of width {self.k}, got {bits.shape}/{mask.shape}"
            )
        state = torch.where(
            torch.as_tensor(mask, dtype=torch.bool),
            torch.full_like(torch.as_tensor(bits, dtype=torch.long), MASK_STATE),
            torch.as_tensor(bits, dtype=torch.long),
        )
        picked = self.bit_embed[torch.arange(self.k), state]  # (..., k, hw)
        return self.start + picked.sum(dim=-2)

    def forward(self, bits, mask, z):
        x = self.embed_masked(bits, mask)
        for block in self.blocks:
            x = block(x, z)
        shift, scale = self.mod_out(z).chunk(2, dim=-1)
        x = self.norm_out(x) * (1.0 + scale) + shift
        return self.out(x)


class LinearHead(nn.Module):
    """Affine map onto the full materialized vocabulary."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.k > LINEAR_HEAD_MAX_BITS:
            raise CapabilityError(
                f"linear head at k={cfg.k} would materialize 2^{cfg.k} logits; "
                f"capped at k <= {LINEAR_HEAD_MAX_BITS}"
            )
        self.k = cfg.k
        self.out = nn.Linear(cfg.width, 2 ** cfg.k)

    def forward(self, z):
        return self.out(z)


class BitHead(nn.Module):
    """One-shot affine predictor of all k bit logits."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.k = cfg.k
        self.out = nn.Linear(cfg.width, cfg.k)

    def forward(self, z):
        return self.out(z)


def build_head(cfg: ModelConfig) -> nn.Module:
    if cfg.head_kind == "mbm":
        return MbmHead(cfg)
    if cfg.head_kind == "linear":
        return LinearHead(cfg)
    return BitHead(cfg)


class Generator(nn.Module):
    """Backbone plus prediction head under one roof."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.head = build_head(cfg)

    def conditions(self, bits, class_ids):
        return self.backbone(bits, class_ids)


def masked_bce_sum(logits, target_bits, counted):
    """Summed binary cross-entropy over counted positions, plus the count.

    A zero count contributes (0, 0) and is excluded from any mean.
    """
    if logits.shape != target_bits.shape or logits.shape != counted.shape:
        raise ShapeError("logits, targets and mask must share a shape")
    counted = counted.to(torch.bool)
    count = int(counted.sum())
    if count == 0:
        return logits.sum() * 0.0, 0
    loss = F.binary_cross_entropy_with_logits(
        logits[counted], target_bits[counted].to(logits.dtype), reduction="sum"
    )
    return loss, count


def loss_bitwise(logits, target_bits, counted=None):
    """Mean binary cross-entropy over counted positions (nats/bit)."""
    if counted is None:
        counted = torch.ones_like(logits, dtype=torch.bool)
    total, count = masked_bce_sum(logits, target_bits, counted)
    return total / max(count, 1)


def loss_linear(logits, target_index):
    """Categorical cross-entropy over the materialized vocabulary."""
    target_index = torch.as_tensor(target_index)
    vocab = logits.shape[-1]
    if target_index.numel() and (
        target_index.min() < 0 or target_index.max() >= vocab
    ):
        raise DomainError(f"target index out of range for vocabulary {vocab}")
    return F.cross_entropy(logits.reshape(-1, vocab), target_index.reshape(-1))


def mbm_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count of the MBM head (linear in k)."""
    hw, w, k = cfg.head_width, cfg.width, cfg.k
    per_block = (w * 3 * hw + 3 * hw) + 3 * hw * hw
    return (
        3 * k * hw          # bit/mask embedding table
        + hw                # start embedding
        + cfg.head_layers * per_block
        + (w * 2 * hw + 2 * hw)  # output modulation
        + (hw * k + k)      # output projection
    )


def linear_param_count(cfg: ModelConfig) -> int:
    return cfg.width * 2 ** cfg.k + 2 ** cfg.k


def bit_param_count(cfg: ModelConfig) -> int:
    return cfg.width * cfg.k + cfg.k
