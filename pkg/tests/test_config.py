"""Run configuration: defaults, serialization round trip, hashing."""

import pytest

from ctiunet.config import (DESK_SEED, RunConfig, apply_overrides,
                            config_from_mapping, config_hash, desk_profile,
                            load_config, parse_config_text, to_text)
from ctiunet.errors import ConfigurationError


def test_reference_defaults():
    c = RunConfig()
    assert c.model1_channels == (16, 32, 64, 128)
    assert c.model2_channels == (16, 32, 64, 128)
    assert c.thresholds == (0.01, 0.1, 0.6)
    assert (c.stage1_alpha, c.stage1_beta) == (0.7, 0.3)
    assert (c.stage2_alpha, c.stage2_beta) == (0.5, 0.5)
    assert c.ce_weight == 0.5
    assert c.lr == 1e-4 and c.batch == 4 and c.epochs == 100
    assert c.train_fraction == 0.8 and c.augment is True
    assert c.window == 512 and c.overlap == 0.25 and c.blend == "constant"
    assert c.model2_in_channels == 4


def test_desk_profile():
    c = desk_profile()
    assert c.master_seed == DESK_SEED
    assert c.synthetic_count == 16 and c.synthetic_size == 64
    assert c.model1_channels == (8, 16, 32)
    assert c.epochs == 60 and c.batch == 4 and c.lr == 1e-4
    assert c.train_fraction == 0.875 and c.augment is False
    assert c.window == 64
    # the loss recipe is the reference one, untouched by the profile
    assert (c.stage1_alpha, c.stage1_beta) == (0.7, 0.3)
    assert desk_profile(master_seed=9).master_seed == 9


def test_validation():
    with pytest.raises(ConfigurationError):
        RunConfig(lr=0.0)
    with pytest.raises(ConfigurationError):
        RunConfig(batch=0)
    with pytest.raises(ConfigurationError):
        RunConfig(epochs=-1)
    with pytest.raises(ConfigurationError):
        RunConfig(train_fraction=0.0)
    with pytest.raises(ConfigurationError):
        RunConfig(train_fraction=1.2)
    with pytest.raises(ConfigurationError):
        RunConfig(blend="pyramid")
    with pytest.raises(ConfigurationError):
        RunConfig(synthetic_count=0)
    with pytest.raises(ConfigurationError):
        RunConfig(model1_channels=())


def test_text_round_trip():
    c = desk_profile(master_seed=3)
    text = to_text(c)
    lines = text.strip().splitlines()
    assert lines == sorted(lines)
    back = config_from_mapping(parse_config_text(text))
    assert back == c


def test_hash_stable_and_sensitive():
    a = RunConfig()
    assert config_hash(a) == config_hash(RunConfig())
    assert len(config_hash(a)) == 64
    assert config_hash(a) != config_hash(RunConfig(master_seed=1))
    assert config_hash(a) != config_hash(RunConfig(thresholds=(0.01, 0.1, 0.7)))


def test_parse_comments_sections_quotes():
    text = """
    # a comment
    [models]
    thresholds = 0.2, 0.8
    blend = "gaussian"
    augment = false
    epochs = 7   # trailing comment
    data_root = '/tmp/x'
    """
    m = parse_config_text(text)
    assert m["thresholds"] == (0.2, 0.8)
    assert m["blend"] == "gaussian" and m["augment"] is False
    assert m["epochs"] == 7 and m["data_root"] == "/tmp/x"
    c = config_from_mapping(m)
    assert c.thresholds == (0.2, 0.8) and c.epochs == 7


def test_parse_rejects_garbage():
    with pytest.raises(ConfigurationError):
        parse_config_text("epochs")
    with pytest.raises(ConfigurationError):
        parse_config_text("= 3")
    with pytest.raises(ConfigurationError):
        config_from_mapping({"epoch": 3})  # typo'd key
    with pytest.raises(ConfigurationError):
        config_from_mapping({"epochs": "many"})
    with pytest.raises(ConfigurationError):
        config_from_mapping({"augment": 1})


def test_scalar_promotes_to_tuple_field():
    c = config_from_mapping({"thresholds": 0.5})
    assert c.thresholds == (0.5,)
    assert c.model2_in_channels == 2


def test_load_config_with_base(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("epochs = 3\nmaster_seed = 11\n", encoding="utf-8")
    c = load_config(p, base=desk_profile())
    assert c.epochs == 3 and c.master_seed == 11
    assert c.synthetic_count == 16  # base retained


def test_apply_overrides():
    c = desk_profile()
    same = apply_overrides(c)
    assert same == c
    d = apply_overrides(c, seed=4, epochs=2, out="elsewhere")
    assert d.master_seed == 4 and d.epochs == 2 and d.out_dir == "elsewhere"
    assert d.synthetic_count == c.synthetic_count
