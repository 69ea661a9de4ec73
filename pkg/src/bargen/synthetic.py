"""Synthetic datasets with known statistics.

``markov_bits`` emits sequences of k-bit tokens. A token is a concatenation
of independent sub-chains of ``block_bits`` bits; each sub-chain is a Markov
chain over 2^block_bits states with a class-conditional transition matrix,
so bits inside one block are correlated given the prefix. Tiny instances
(k <= 4, length <= 3) expose their exact sequence distribution.

``checker_textures`` and ``toy_images`` emit small RGB images for the toy
autoencoder experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, DomainError

TASK_KINDS = ("markov_bits", "checker_textures", "toy_images")


@dataclass(frozen=True)
class SyntheticTask:
    kind: str
    k: int = 4
    seq_len: int = 8
    class_count: int = 4
    block_bits: int = 4
    transition: np.ndarray | None = None  # (class_count, S, S)
    initial: np.ndarray | None = None     # (class_count, S)
    image_size: int = 32

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise DomainError(f"unknown task kind {self.kind!r}")
        if self.kind != "markov_bits":
            return
        if self.k % self.block_bits:
            raise DomainError(
                f"block_bits {self.block_bits} must divide k={self.k}"
            )
        s = 2 ** self.block_bits
        t = np.asarray(self.transition, dtype=np.float64)
        if t.shape != (self.class_count, s, s):
            raise DomainError(
                f"transition must have shape ({self.class_count}, {s}, {s})"
            )
        if (t < 0).any() or np.abs(t.sum(axis=-1) - 1.0).max() > 1e-9:
            raise DomainError("transition rows must be stochastic (sum to 1 +- 1e-9)")
        p0 = np.asarray(self.initial, dtype=np.float64)
        if p0.shape != (self.class_count, s):
            raise DomainError(f"initial must have shape ({self.class_count}, {s})")
        if (p0 < 0).any() or np.abs(p0.sum(axis=-1) - 1.0).max() > 1e-9:
            raise DomainError("initial rows must be stochastic (sum to 1 +- 1e-9)")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "initial", p0)

    @property
    def states(self) -> int:
        return 2 ** self.block_bits

    @property
    def blocks(self) -> int:
        return self.k // self.block_bits


def make_markov_task(
    k: int = 4,
    seq_len: int = 8,
    class_count: int = 4,
    block_bits: int | None = None,
    determinism: float = 0.98,
    seed: int = 0,
) -> SyntheticTask:
    """Near-deterministic permutation chains: from state s the chain moves to
    a class-specific permutation of s with probability ``determinism`` and to
    a uniform state otherwise. The initial state is deterministic per class."""
    if block_bits is None:
        block_bits = min(k, 4)
    s = 2 ** block_bits
    rng = np.random.default_rng(seed)
    transition = np.zeros((class_count, s, s))
    initial = np.zeros((class_count, s))
    for c in range(class_count):
        perm = rng.permutation(s)
        transition[c] = (1.0 - determinism) / s
        transition[c, np.arange(s), perm] += determinism
        initial[c, c % s] = 1.0
    return SyntheticTask(
        kind="markov_bits",
        k=k,
        seq_len=seq_len,
        class_count=class_count,
        block_bits=block_bits,
        transition=transition,
        initial=initial,
    )


def _sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise categorical draw; probs has shape (N, S)."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])[:, None]
    return (u > cdf).sum(axis=-1)


def _states_to_bits(states: np.ndarray, block_bits: int) -> np.ndarray:
    shifts = np.arange(block_bits)
    return ((states[..., None] >> shifts) & 1).astype(np.uint8)


def gen_token_dataset(task: SyntheticTask, count: int, seed: int):
    """Returns (tokens, classes): uint8 tokens of shape (count, seq_len, k)."""
    if task.kind != "markov_bits":
        raise DomainError(f"token datasets need a markov_bits task, got {task.kind}")
    rng = np.random.default_rng(seed)
    classes = rng.integers(task.class_count, size=count)
    tokens = np.zeros((count, task.seq_len, task.k), dtype=np.uint8)
    for blk in range(task.blocks):
        states = _sample_categorical(task.initial[classes], rng)
        lo = blk * task.block_bits
        for t in range(task.seq_len):
            tokens[:, t, lo : lo + task.block_bits] = _states_to_bits(
                states, task.block_bits
            )
            if t + 1 < task.seq_len:
                states = _sample_categorical(task.transition[classes, states], rng)
    return tokens, classes


def exact_sequence_distribution(task: SyntheticTask, class_id: int) -> np.ndarray:
    """Exact distribution over all (2^k)^seq_len token sequences, flattened
    with token t contributing index * (2^k)^t. Only for tiny instances."""
    if task.kind != "markov_bits":
        raise DomainError("exact distribution is defined for markov_bits only")
    if task.k > 4 or task.seq_len > 3:
        raise CapabilityError(
            "exact sequence distribution is limited to k <= 4 and length <= 3"
        )
    s = task.states
    probs = np.zeros(s ** task.seq_len)
    for flat in range(probs.size):
        seq = [(flat // s**t) % s for t in range(task.seq_len)]
        p = task.initial[class_id, seq[0]]
        for a, b in zip(seq, seq[1:]):
            p *= task.transition[class_id, a, b]
        probs[flat] = p
    return probs


def _image_grid(size):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    return ys, xs


def gen_image_dataset(task: SyntheticTask, count: int, seed: int):
    """Returns (images, classes): float32 images of shape (count, 3, s, s)
    with values in [0, 1]."""
    rng = np.random.default_rng(seed)
    classes = rng.integers(task.class_count, size=count)
    size = task.image_size
    ys, xs = _image_grid(size)
    images = np.zeros((count, 3, size, size), dtype=np.float64)
    for i, c in enumerate(classes):
        if task.kind == "checker_textures":
            period = 2 + int(c)
            phase = rng.random(2)
            pattern = 0.5 + 0.5 * np.sign(
                np.sin(2 * np.pi * (xs * period + phase[0]))
                * np.sin(2 * np.pi * (ys * period + phase[1]))
            )
            hue = rng.random(3) * 0.5 + 0.25
            images[i] = pattern[None] * hue[:, None, None] + (1 - pattern[None]) * (
                1 - hue[:, None, None]
            )
        elif task.kind == "toy_images":
            # a few soft blobs with class-dependent base color
            base = np.array(
                [0.2 + 0.6 * (c % 3 == j) for j in range(3)]
            )[:, None, None]
            img = np.broadcast_to(base, (3, size, size)).copy() * 0.3
            for _ in range(3):
                cy, cx = rng.random(2)
                sig = 0.08 + 0.12 * rng.random()
                amp = rng.random(3)
                blob = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sig**2))
                img += amp[:, None, None] * blob[None]
            images[i] = np.clip(img, 0.0, 1.0)
        else:
            raise DomainError(f"image datasets need an image task, got {task.kind}")
    return images.astype(np.float32), classes
