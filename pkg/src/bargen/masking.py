"""Masking-ratio samplers, per-bit masking, and unmasking-schedule
construction.

Ratio strategies (all produce values in [0, 1]):
  * ``uniform``       r = u,                u ~ U(0, 1)
  * ``arccos``        r = (2/pi) arccos(u), u ~ U(0, 1)   (CDF 1 - cos(pi r / 2))
  * ``logit_normal``  r = sigmoid(n),       n ~ N(mu, sigma)

A continuous ratio becomes a bit count via round-half-up; a rounded count of
zero is allowed and simply contributes no loss terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ScheduleError

RATIO_KINDS = ("arccos", "uniform", "logit_normal")


@dataclass(frozen=True)
class RatioStrategy:
    kind: str = "logit_normal"
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in RATIO_KINDS:
            raise DomainError(f"unknown ratio strategy {self.kind!r}")
        if self.kind == "logit_normal" and self.sigma <= 0:
            raise DomainError(f"logit-normal sigma must be > 0, got {self.sigma}")


def sample_mask_ratios(
    strategy: RatioStrategy, size, rng: np.random.Generator
) -> np.ndarray:
    """Draw masking ratios in [0, 1] with the given shape."""
    if strategy.kind == "uniform":
        return rng.random(size)
    if strategy.kind == "arccos":
        return (2.0 / math.pi) * np.arccos(rng.random(size))
    n = rng.normal(strategy.mu, strategy.sigma, size)
    return 1.0 / (1.0 + np.exp(-n))


def sample_mask_ratio(strategy: RatioStrategy, rng: np.random.Generator) -> float:
    return float(sample_mask_ratios(strategy, (), rng))


def ratio_to_count(ratio: float, k: int) -> int:
    """round-half-up of ratio * k, clipped to [0, k]."""
    if ratio < 0 or ratio > 1:
        raise DomainError(f"mask ratio must be in [0, 1], got {ratio}")
    return min(k, int(math.floor(ratio * k + 0.5)))


def sample_bit_mask(k: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask with exactly round(ratio * k) positions hidden, chosen
    uniformly without replacement."""
    m = ratio_to_count(ratio, k)
    mask = np.zeros(k, dtype=bool)
    if m:
        mask[rng.choice(k, size=m, replace=False)] = True
    return mask


@dataclass(frozen=True)
class MaskedToken:
    """A bit token plus per-bit mask state (True = hidden)."""

    bits: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        mask = np.asarray(self.mask, dtype=bool)
        if bits.shape != mask.shape or bits.ndim != 1:
            raise DomainError("bits and mask must be 1-D with equal length")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "mask", mask)


def apply_bit_mask(
    bits: np.ndarray, ratio: float, rng: np.random.Generator
) -> MaskedToken:
    bits = np.asarray(bits, dtype=np.uint8)
    return MaskedToken(bits, sample_bit_mask(bits.size, ratio, rng))


@dataclass(frozen=True)
class UnmaskSchedule:
    """Ordered positive per-step bit counts that sum to the token width."""

    steps: tuple
    bit_width: int

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        if not steps or any(s < 1 for s in steps):
            raise ScheduleError(f"schedule entries must be positive, got {steps}")
        if sum(steps) != self.bit_width:
            raise ScheduleError(
                f"schedule {list(steps)} sums to {sum(steps)}, "
                f"expected bit width {self.bit_width}"
            )
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return len(self.steps)


def make_schedule(k: int, mode: str = "uniform_steps", value=None) -> UnmaskSchedule:
    """Build a schedule.

    ``uniform_steps``: spread k over ``value`` entries differing by at most
    one, smaller entries first. ``explicit``: validate the given list.
    """
    if k < 1:
        raise DomainError(f"bit width must be >= 1, got {k}")
    if mode == "uniform_steps":
        s = int(value)
        if s < 1 or s > k:
            raise DomainError(f"step count must be in [1, {k}], got {s}")
        base, extra = divmod(k, s)
        steps = [base] * (s - extra) + [base + 1] * extra
        return UnmaskSchedule(tuple(steps), k)
    if mode == "explicit":
        return UnmaskSchedule(tuple(value), k)
    raise DomainError(f"unknown schedule mode {mode!r}")


def parse_schedule(text: str, k: int) -> UnmaskSchedule:
    """Parse the config syntax ``"2,2,5,7"`` into a schedule."""
    try:
        steps = tuple(int(part) for part in text.split(","))
    except ValueError as e:
        raise ScheduleError(f"bad schedule {text!r}: {e}") from e
    return UnmaskSchedule(steps, k)
