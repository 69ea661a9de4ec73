"""Desk-scale masked bit autoregressive modeling.

Binary FSQ tokenization, a causal transformer backbone with interchangeable
prediction heads (masked-bit-modeling, linear, bit), progressive
bit-unmasking sampling with classifier-free guidance, and a verification
harness built on exact enumeration oracles.
"""

from .bitcodec import (
    TokenGrid,
    bits_to_index,
    index_to_bits,
    load_token_grid,
    patch_shuffle,
    patch_unshuffle,
    save_token_grid,
)
from .budget import BudgetQuery, bit_budget_continuous, bit_budget_discrete
from .configs import ExperimentConfig, TrainConfig, load_config
from .errors import (
    BargenError,
    CapabilityError,
    ConfigError,
    DomainError,
    NumericError,
    ScheduleError,
    ShapeError,
    TrainingError,
)
from .fsq import FsqConfig, fsq_dequantize, fsq_quantize
from .masking import (
    MaskedToken,
    RatioStrategy,
    UnmaskSchedule,
    apply_bit_mask,
    make_schedule,
    sample_mask_ratio,
)
from .model import Generator, ModelConfig
from .sampler import SampleConfig, cfg_combine, generate_sequence, guidance_at, sample_token

__version__ = "0.1.0"
