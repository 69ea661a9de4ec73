"""Bit-budget arithmetic: the total number of bits a tokenizer allocates to
an image's latent representation.

Discrete tokenizers are scored by their codebook exponent k = ceil(log2 C);
continuous ones by 16 bits per latent channel (mixed-precision convention).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class BudgetQuery:
    """Geometry of one tokenizer: image size, downsample factor, and either
    the codebook exponent ``k`` (discrete) or channel dim ``d`` (continuous)."""

    height: int
    width: int
    downsample: int
    k: int | None = None
    d: int | None = None

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.downsample < 1:
            raise DomainError("height, width and downsample must be >= 1")
        if self.height % self.downsample or self.width % self.downsample:
            raise ShapeError(
                f"downsample {self.downsample} does not divide "
                f"{self.height}x{self.width}"
            )

    @property
    def tokens(self) -> int:
        return (self.height // self.downsample) * (self.width // self.downsample)


def bit_budget_discrete(q: BudgetQuery) -> int:
    """(H/f) * (W/f) * k bits."""
    if q.k is None or q.k < 1:
        raise DomainError(f"discrete budget needs codebook exponent k >= 1, got {q.k}")
    return q.tokens * q.k


def bit_budget_continuous(q: BudgetQuery) -> int:
    """(H/f) * (W/f) * 16 * D bits, 16 bits per latent channel."""
    if q.d is None or q.d < 1:
        raise DomainError(f"continuous budget needs channel dim d >= 1, got {q.d}")
    return q.tokens * 16 * q.d
