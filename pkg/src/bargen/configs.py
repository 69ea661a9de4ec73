"""Experiment configuration: flat ``key=value`` text files whose keys mirror
the model / training / sampling / task dataclass fields. Unknown keys are
errors, reported with the offending key."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError, DomainError
from .masking import RatioStrategy, parse_schedule
from .model import ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.96
    batch_size: int = 64
    epochs: int = 50
    warmup_epochs: int = 5
    end_lr: float = 1e-5
    grad_clip_norm: float = 1.0
    seed: int = 0
    label_dropout: float = 0.1
    loss_support: str = "masked"  # or "all_bits"

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")
        if self.warmup_epochs > self.epochs:
            raise ConfigError("warmup_epochs must not exceed epochs")
        if self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be > 0")
        if self.loss_support not in ("masked", "all_bits"):
            raise ConfigError("loss_support must be 'masked' or 'all_bits'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass(frozen=True)
class TaskConfig:
    task: str = "markov_bits"
    seq_len: int = 8
    determinism: float = 0.98
    block_bits: int = 0  # 0 = min(k, 4)
    dataset_size: int = 2048
    heldout_size: int = 256
    task_seed: int = 0


@dataclass(frozen=True)
class SamplingConfig:
    """Raw sampling fields as they appear in config files; resolved into a
    :class:`bargen.sampler.SampleConfig` once the bit width is known."""

    unmask_schedule: str = "4,4,4,4"
    temperature: float = 2.0
    guidance_scale: float = 0.0
    guidance_schedule: str = "linear"
    selection: str = "confidence"
    temperature_mode: str = "logit"


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    mask_strategy: RatioStrategy = field(default_factory=RatioStrategy)

    def sample_config(self, seed: int | None = None):
        from .sampler import SampleConfig

        schedule = parse_schedule(self.sampling.unmask_schedule, self.model.k)
        return SampleConfig(
            schedule=schedule,
            temperature=self.sampling.temperature,
            guidance_scale=self.sampling.guidance_scale,
            guidance_schedule=self.sampling.guidance_schedule,
            selection=self.sampling.selection,
            temperature_mode=self.sampling.temperature_mode,
            seed=self.train.seed if seed is None else seed,
        )


def _field_map():
    """key -> (section name, field name, converter)."""
    table = {}
    for section, cls in (
        ("model", ModelConfig),
        ("train", TrainConfig),
        ("sampling", SamplingConfig),
        ("task", TaskConfig),
    ):
        for f in fields(cls):
            if f.name in table:
                raise AssertionError(f"duplicate config key {f.name}")
            table[f.name] = (section, f.name, type(getattr(cls, f.name)))
    table["mask_strategy"] = ("mask", "kind", str)
    table["mask_mu"] = ("mask", "mu", float)
    table["mask_sigma"] = ("mask", "sigma", float)
    return table


_FIELDS = _field_map()


def parse_config_text(text: str) -> ExperimentConfig:
    sections = {"model": {}, "train": {}, "sampling": {}, "task": {}, "mask": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        section, name, conv = _FIELDS[key]
        try:
            sections[section][name] = conv(value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from e
    try:
        return ExperimentConfig(
            model=ModelConfig(**sections["model"]),
            train=TrainConfig(**sections["train"]),
            sampling=SamplingConfig(**sections["sampling"]),
            task=TaskConfig(**sections["task"]),
            mask_strategy=RatioStrategy(**sections["mask"]),
        )
    except DomainError as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())
