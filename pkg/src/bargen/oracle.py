"""Exact distributions implied by a model under random-order unmasking.

For tiny instances (k <= 4 bits, <= 3 tokens) the sampler's distribution can
be enumerated exactly: at every schedule step the set of finalized positions
is a uniformly random subset of the masked ones, and the committed bits are
independent Bernoullis from the (temperature-scaled) head logits. The
resulting probability tables are the ground truth for sampler tests.
"""

from __future__ import annotations

import math
from itertools import combinations, product

import numpy as np
import torch

from .bitcodec import index_to_bits
from .errors import CapabilityError, DomainError
from .masking import UnmaskSchedule
from .model import Generator

MAX_ORACLE_BITS = 4
MAX_ORACLE_TOKENS = 3


def _head_probs(model, state, z, temperature):
    """Per-bit probabilities of bit=1 given a partially revealed token.
    ``state`` is a tuple with entries in {0, 1, None}."""
    k = len(state)
    bits = torch.tensor([[0 if s is None else s for s in state]], dtype=torch.long)
    mask = torch.tensor([[s is None for s in state]], dtype=torch.bool)
    with torch.no_grad():
        logits = model.head(bits, mask, z)
    logits = logits[0].double().numpy() / temperature
    return 1.0 / (1.0 + np.exp(-logits))


def token_distribution(
    model: Generator,
    z: torch.Tensor,
    schedule: UnmaskSchedule,
    temperature: float = 1.0,
) -> np.ndarray:
    """Exact distribution over all 2^k tokens generated from condition ``z``
    with random-order selection and the given schedule."""
    k = model.cfg.k
    if k > MAX_ORACLE_BITS:
        raise CapabilityError(f"oracle enumeration caps at k <= {MAX_ORACLE_BITS}")
    if schedule.bit_width != k:
        raise DomainError("schedule bit width must match the model")
    if z.ndim == 1:
        z = z[None, :]

    probs_out = np.zeros(2**k)
    cache = {}

    def recurse(state: tuple, step_idx: int, weight: float):
        if step_idx == len(schedule.steps):
            idx = sum(int(b) << i for i, b in enumerate(state))
            probs_out[idx] += weight
            return
        if state not in cache:
            cache[state] = _head_probs(model, state, z, temperature)
        p = cache[state]
        masked = [i for i, s in enumerate(state) if s is None]
        n_step = schedule.steps[step_idx]
        subset_weight = 1.0 / math.comb(len(masked), n_step)
        for subset in combinations(masked, n_step):
            for values in product((0, 1), repeat=n_step):
                w = weight * subset_weight
                new_state = list(state)
                for pos, val in zip(subset, values):
                    w *= p[pos] if val else 1.0 - p[pos]
                    new_state[pos] = val
                if w:
                    recurse(tuple(new_state), step_idx + 1, w)

    recurse((None,) * k, 0, 1.0)
    return probs_out


def single_step_distribution(
    model: Generator, z: torch.Tensor, temperature: float = 1.0
) -> np.ndarray:
    """Closed-form product of per-bit Bernoullis from the fully-masked
    logits; equals :func:`token_distribution` with a one-step schedule."""
    k = model.cfg.k
    p = _head_probs(model, (None,) * k, z[None, :] if z.ndim == 1 else z, temperature)
    probs = np.ones(2**k)
    for v in range(2**k):
        bits = index_to_bits(v, k)
        probs[v] = np.prod(np.where(bits == 1, p, 1.0 - p))
    return probs


def exact_model_distribution(
    model: Generator,
    class_id: int,
    n_tokens: int,
    schedule: UnmaskSchedule,
    temperature: float = 1.0,
) -> np.ndarray:
    """Exact joint distribution over token sequences, flattened with token t
    contributing ``index * (2^k)^t``. Guidance-free, random-order only."""
    k = model.cfg.k
    if k > MAX_ORACLE_BITS or n_tokens > MAX_ORACLE_TOKENS:
        raise CapabilityError(
            f"exact enumeration caps at k <= {MAX_ORACLE_BITS} and "
            f"length <= {MAX_ORACLE_TOKENS}"
        )
    vocab = 2**k
    class_ids = torch.tensor([class_id], dtype=torch.long)

    def extend(prefix: tuple, weight: float, table: np.ndarray, base: int):
        bits = (
            torch.stack(
                [torch.from_numpy(index_to_bits(v, k)) for v in prefix]
            )[None]
            if prefix
            else torch.zeros(1, 0, k, dtype=torch.uint8)
        )
        with torch.no_grad():
            z = model.backbone(bits, class_ids)[:, -1, :]
        dist = token_distribution(model, z, schedule, temperature)
        for v in range(vocab):
            w = weight * dist[v]
            if len(prefix) + 1 == n_tokens:
                table[base + v * vocab ** len(prefix)] += w
            elif w:
                extend(
                    prefix + (v,), w, table, base + v * vocab ** len(prefix)
                )

    table = np.zeros(vocab**n_tokens)
    extend((), 1.0, table, 0)
    return table
