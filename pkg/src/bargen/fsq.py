"""Binary finite scalar quantization: 2 levels per channel, 1 bit each.

Levels sit at {-1, +1} (sign quantization; the usual half-integer FSQ grid
is equivalent up to scale for two levels and the bit semantics are cleaner).
A value of exactly 0 quantizes to +1. The backward pass is the straight-
through estimator: gradients flow through as if quantization were identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .bitcodec import TokenGrid
from .errors import DomainError, NumericError, ShapeError


@dataclass(frozen=True)
class FsqConfig:
    """Quantizer geometry: d binary channels per token, spatial downsample f."""

    channels_per_token: int
    downsample_factor: int = 1
    levels: int = 2

    def __post_init__(self):
        if self.channels_per_token < 1:
            raise DomainError("channels_per_token must be >= 1")
        if self.downsample_factor < 1:
            raise DomainError("downsample_factor must be >= 1")
        if self.levels != 2:
            raise DomainError("only binary FSQ (2 levels per channel) is supported")


def fsq_quantize(latent: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Quantize each channel to {-1, +1} by sign (0 -> +1).

    Returns ``(bits, quantized)`` where ``bits`` is uint8 with 1 wherever the
    level is +1, and ``quantized`` carries straight-through gradients back to
    ``latent``.
    """
    if not torch.isfinite(latent).all():
        raise NumericError("latent contains NaN or Inf")
    levels = torch.where(latent >= 0, 1.0, -1.0).to(latent.dtype)
    bits = (levels > 0).to(torch.uint8)
    quantized = latent + (levels - latent).detach()
    return bits, quantized


def fsq_dequantize(bits: torch.Tensor) -> torch.Tensor:
    """Map bit 1 -> +1 and bit 0 -> -1 per channel."""
    bits = torch.as_tensor(bits)
    if not torch.isin(bits, torch.tensor([0, 1], dtype=bits.dtype)).all():
        raise DomainError("bits must be 0 or 1")
    return bits.to(torch.float32) * 2.0 - 1.0


def latent_to_token_grid(latent: torch.Tensor) -> TokenGrid:
    """Quantize an (h, w, d) latent grid into a :class:`TokenGrid`."""
    if latent.ndim != 3:
        raise ShapeError(f"latent grid must be (h, w, d), got {tuple(latent.shape)}")
    bits, _ = fsq_quantize(latent)
    return TokenGrid(bits.cpu().numpy())


def token_grid_to_latent(grid: TokenGrid) -> torch.Tensor:
    """Inverse of :func:`latent_to_token_grid` up to quantization."""
    return fsq_dequantize(torch.from_numpy(grid.bits.copy()))
