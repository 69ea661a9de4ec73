import pytest

from bargen.configs import (
    ExperimentConfig,
    TrainConfig,
    load_config,
    parse_config_text,
)
from bargen.errors import CapabilityError, ConfigError


def test_empty_config_gives_defaults():
    exp = parse_config_text("")
    assert exp == ExperimentConfig()
    assert exp.train.learning_rate == 3e-4
    assert exp.train.beta2 == 0.96
    assert exp.model.head_kind == "mbm"
    assert exp.sampling.unmask_schedule == "4,4,4,4"
    assert exp.mask_strategy.kind == "logit_normal"


def test_parse_assigns_sections():
    text = """
    # comment and blank lines are ignored
    depth = 2
    k = 8
    head_kind = bit
    learning_rate = 1e-3
    epochs = 3  # trailing comment
    warmup_epochs = 1
    seq_len = 5
    unmask_schedule = 2,2,5,7
    mask_strategy = arccos
    """
    exp = parse_config_text(text)
    assert exp.model.depth == 2 and exp.model.k == 8
    assert exp.model.head_kind == "bit"
    assert exp.train.learning_rate == 1e-3 and exp.train.epochs == 3
    assert exp.task.seq_len == 5
    assert exp.sampling.unmask_schedule == "2,2,5,7"
    assert exp.mask_strategy.kind == "arccos"


def test_unknown_key_is_reported():
    with pytest.raises(ConfigError, match="momentum"):
        parse_config_text("momentum = 0.9")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("depth = 2\nnot a key value line")


def test_bad_value_is_reported_with_line():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("depth = two")


def test_domain_errors_become_config_errors():
    with pytest.raises(ConfigError):
        parse_config_text("mask_strategy = triangular")
    with pytest.raises(ConfigError):
        parse_config_text("warmup_epochs = 10\nepochs = 5")


def test_capability_errors_propagate():
    with pytest.raises(CapabilityError):
        parse_config_text("head_kind = linear\nk = 32")


def test_sample_config_resolution():
    exp = parse_config_text("k = 16\ntemperature = 2.5\nguidance_scale = 5.0")
    cfg = exp.sample_config(seed=3)
    assert cfg.schedule.steps == (4, 4, 4, 4)
    assert cfg.temperature == 2.5
    assert cfg.guidance_scale == 5.0
    assert cfg.seed == 3
    with pytest.raises(Exception):
        parse_config_text("k = 15").sample_config()  # 4,4,4,4 does not sum to 15


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(beta2=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(grad_clip_norm=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(loss_support="sometimes")
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_load_config_from_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("k = 8\nepochs = 1\nwarmup_epochs = 0\n", encoding="utf-8")
    exp = load_config(path)
    assert exp.model.k == 8 and exp.train.epochs == 1
