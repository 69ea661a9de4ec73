"""Lossless conversion between codebook indices, bit vectors, and shuffled
bit-token layouts.

Conventions (fixed, arbitrary where the underlying scheme leaves them open):
  * bit order is LSB-first everywhere (``BIT_ORDER``),
  * patch shuffling concatenates the p x p block's tokens in row-major
    block order.

Bit vectors are plain ``uint8`` numpy arrays with values in {0, 1}; tokens
wider than 64 bits are never materialized as integers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

# Single point of truth for the bit-packing convention.
BIT_ORDER = "little"

MAX_INDEX_BITS = 64
MAX_BITS = 256

GRID_MAGIC = b"BARG"
GRID_VERSION = 1


def index_to_bits(index: int, k: int) -> np.ndarray:
    """Encode ``index`` as a length-``k`` LSB-first bit vector."""
    if k < 1 or k > MAX_BITS:
        raise DomainError(f"bit width must be in [1, {MAX_BITS}], got {k}")
    index = int(index)
    if index < 0 or index >= (1 << k):
        raise DomainError(f"index {index} out of range for {k} bits")
    return np.array([(index >> i) & 1 for i in range(k)], dtype=np.uint8)


def bits_to_index(bits: np.ndarray) -> int:
    """Exact inverse of :func:`index_to_bits`. Only defined up to 64 bits."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 1 or bits.size == 0:
        raise DomainError("bit vector must be non-empty and 1-D")
    if bits.size > MAX_INDEX_BITS:
        raise DomainError(
            f"{bits.size}-bit vectors are compared as bit vectors only "
            f"(index support caps at {MAX_INDEX_BITS} bits)"
        )
    if not np.isin(bits, (0, 1)).all():
        raise DomainError("bit vector entries must be 0 or 1")
    return sum(int(b) << i for i, b in enumerate(bits))


@dataclass(frozen=True)
class TokenGrid:
    """A height x width grid of k-bit tokens.

    ``bits`` has shape (height, width, k) and dtype uint8.
    """

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 3:
            raise ShapeError(f"token grid must be 3-D (h, w, k), got {bits.shape}")
        if bits.shape[2] < 1:
            raise ShapeError("bits per token must be >= 1")
        if not np.isin(bits, (0, 1)).all():
            raise DomainError("token grid entries must be 0 or 1")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def bits_per_token(self) -> int:
        return self.bits.shape[2]

    @property
    def total_bits(self) -> int:
        return self.bits.size

    def __eq__(self, other):
        if not isinstance(other, TokenGrid):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(
            (self.bits == other.bits).all()
        )


def patch_shuffle(grid: TokenGrid, patch: int) -> TokenGrid:
    """Regroup each p x p block of tokens into one token of k*p*p bits.

    Tokens inside a block are concatenated in row-major block order.
    """
    p = int(patch)
    if p < 1:
        raise DomainError(f"patch size must be >= 1, got {p}")
    h, w, k = grid.bits.shape
    if h % p or w % p:
        raise ShapeError(f"patch size {p} does not divide grid {h}x{w}")
    # (h/p, p, w/p, p, k) -> (h/p, w/p, p, p, k) -> concat row-major
    blocks = grid.bits.reshape(h // p, p, w // p, p, k)
    blocks = blocks.transpose(0, 2, 1, 3, 4)
    return TokenGrid(blocks.reshape(h // p, w // p, p * p * k))


def patch_unshuffle(grid: TokenGrid, patch: int) -> TokenGrid:
    """Exact inverse of :func:`patch_shuffle`."""
    p = int(patch)
    if p < 1:
        raise DomainError(f"patch size must be >= 1, got {p}")
    h, w, kp = grid.bits.shape
    if kp % (p * p):
        raise ShapeError(f"bit width {kp} not divisible by patch area {p * p}")
    k = kp // (p * p)
    blocks = grid.bits.reshape(h, w, p, p, k)
    blocks = blocks.transpose(0, 2, 1, 3, 4)
    return TokenGrid(blocks.reshape(h * p, w * p, k))


def save_token_grid(grid: TokenGrid, path) -> None:
    """Write the documented binary container: magic, version byte, h/w/k as
    u32 LE, then the row-major bit stream packed LSB-first within bytes."""
    h, w, k = grid.bits.shape
    payload = np.packbits(grid.bits.reshape(-1), bitorder=BIT_ORDER)
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(bytes([GRID_VERSION]))
        f.write(struct.pack("<III", h, w, k))
        f.write(payload.tobytes())


def load_token_grid(path) -> TokenGrid:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != GRID_MAGIC:
        raise DomainError(f"bad magic {raw[:4]!r}, expected {GRID_MAGIC!r}")
    if raw[4] != GRID_VERSION:
        raise DomainError(f"unsupported container version {raw[4]}")
    h, w, k = struct.unpack("<III", raw[5:17])
    n_bits = h * w * k
    n_bytes = (n_bits + 7) // 8
    body = raw[17 : 17 + n_bytes]
    if len(body) != n_bytes:
        raise ShapeError(f"truncated container: want {n_bytes} payload bytes")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), bitorder=BIT_ORDER)
    return TokenGrid(bits[:n_bits].reshape(h, w, k))
