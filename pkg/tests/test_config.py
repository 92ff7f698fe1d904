"""Config file parsing, dumping, and precedence resolution."""

import pytest

from latentdeid import ConfigError
from latentdeid.config import (
    ENV_CONFIG_PATH,
    KEY_TO_FIELD,
    RunConfig,
    config_from_mapping,
    config_to_mapping,
    dump_config_text,
    load_config_file,
    parse_config_text,
    resolve_config,
)


def test_parse_scalars_and_comments():
    text = """
    # comment line
    optimize.lr = 0.01
    optimize.n_opt = 25
    loss.bernoulli = true
    providers.name = toy

    optimize.mode = tangent
    """
    mapping = parse_config_text(text)
    assert mapping == {
        "optimize.lr": 0.01,
        "optimize.n_opt": 25,
        "loss.bernoulli": True,
        "providers.name": "toy",
        "optimize.mode": "tangent",
    }
    assert isinstance(mapping["optimize.n_opt"], int)
    assert isinstance(mapping["optimize.lr"], float)


def test_parse_rejects_malformed_lines():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("optimize.lr = 1\nnot-a-pair\n")
    with pytest.raises(ConfigError, match="empty key"):
        parse_config_text("= 3\n")


def test_dump_parse_round_trip_is_exact():
    config = RunConfig(lr=0.007, n_opt=12, bernoulli_attr=True,
                       attribute_targets={"Smiling": 0.9})
    mapping = config_to_mapping(config)
    recovered = parse_config_text(dump_config_text(mapping))
    assert recovered == mapping
    assert config_from_mapping(recovered) == config


def test_full_float_precision_survives_the_round_trip():
    mapping = {"optimize.lr": 0.1 + 0.2}  # 0.30000000000000004
    recovered = parse_config_text(dump_config_text(mapping))
    assert recovered["optimize.lr"] == mapping["optimize.lr"]


def test_every_field_has_a_key():
    config = RunConfig()
    mapped_fields = set(KEY_TO_FIELD.values())
    for f in vars(config):
        if f == "attribute_targets":
            continue  # handled by the target.* prefix
        assert f in mapped_fields, f"field {f} unreachable from config files"


def test_unknown_key_is_rejected_with_listing():
    with pytest.raises(ConfigError, match="optimize.lr"):
        config_from_mapping({"optimizer.lr": 0.01})


def test_target_keys_resolve_aliases():
    config = config_from_mapping({"target.smile": 0.9, "target.Male": 0.2})
    assert config.attribute_targets == {"Smiling": 0.9, "Male": 0.2}


def test_int_is_promoted_to_float_but_not_conversely():
    config = config_from_mapping({"optimize.lr": 1})
    assert config.lr == 1.0
    assert isinstance(config.lr, float)
    with pytest.raises(ConfigError, match="integer"):
        config_from_mapping({"optimize.n_opt": 2.5})
    with pytest.raises(ConfigError, match="true/false"):
        config_from_mapping({"loss.bernoulli": 1})


def test_lambda_key_feeds_strength():
    assert config_from_mapping({"optimize.lambda": 500}).strength == 500.0


def test_defaults():
    config = RunConfig()
    assert (config.mode, config.lr, config.strength) == ("linear", 0.001, 1000.0)
    assert (config.t0, config.t_edit, config.t_boost, config.n_denoise) == (600, 400, 200, 16)
    assert (config.weight_identity, config.weight_attribute, config.weight_mask) == (1.0, 1.0, 0.5)
    assert config.n_opt == 50
    assert config.seed == 1006
    assert config.init_norm == 0.1


def test_resolution_precedence(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("optimize.lr = 0.5\noptimize.n_opt = 7\n")
    config = resolve_config(file_path=path, flag_overrides={"lr": 0.25})
    assert config.lr == 0.25      # flag beats file
    assert config.n_opt == 7      # file beats default
    assert config.strength == 1000.0  # untouched default


def test_none_flags_are_skipped(tmp_path):
    config = resolve_config(flag_overrides={"lr": None, "seed": 3})
    assert config.lr == 0.001
    assert config.seed == 3


def test_env_var_supplies_the_file(tmp_path, monkeypatch):
    path = tmp_path / "env.conf"
    path.write_text("optimize.mode = tangent\n")
    monkeypatch.setenv(ENV_CONFIG_PATH, str(path))
    assert resolve_config().mode == "tangent"
    # an explicit path wins over the environment
    other = tmp_path / "other.conf"
    other.write_text("optimize.mode = linear\n")
    assert resolve_config(file_path=other).mode == "linear"


def test_flag_targets_merge_with_file_targets(tmp_path):
    path = tmp_path / "t.conf"
    path.write_text("target.Smiling = 0.8\n")
    config = resolve_config(
        file_path=path, flag_overrides={"attribute_targets": {"male": 0.3}}
    )
    assert config.attribute_targets == {"Smiling": 0.8, "Male": 0.3}


def test_missing_file_is_an_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config_file(tmp_path / "absent.conf")


def test_unknown_flag_field_is_an_error():
    with pytest.raises(ConfigError, match="unknown configuration field"):
        resolve_config(flag_overrides={"learning_rate": 0.1})
