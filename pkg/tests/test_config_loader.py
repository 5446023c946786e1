import json

import pytest

from config_loader import ExperimentConfig, config_hash, load_config, parse_config, read_yaml
from exceptions import ConfigError


@pytest.fixture
def write_config(tmp_path):
    """A factory fixture that writes a config file and returns its path."""
    def _write(name, text):
        path = tmp_path / name
        path.write_text(text)
        return path
    return _write


PATTERN_YAML = """
pattern:
  s: [1, 2]
  M: [0, 2, 6]
"""


def test_load_config_merges_over_system_config(write_config):
    # Arrange
    system = write_config("system.yaml", "paths:\n  out_dir: out\ntimezone: UTC\nthreads: 4\n")
    experiment = write_config("my_run.yaml", "command: pattern\nthreads: 2\n" + PATTERN_YAML)

    # Act
    merged = load_config(experiment, system)

    # Assert
    assert merged["threads"] == 2
    assert merged["paths"] == {"out_dir": "out"}
    assert merged["__parent_run_name__"] == "my_run"


def test_load_config_applies_dotted_overrides(write_config):
    # Arrange
    experiment = write_config("run.yaml", "base_params:\n  experiment_name: X\n  master_seed: 1\n" + PATTERN_YAML)

    # Act
    merged = load_config(experiment, None, overrides={"command": "pattern", "base_params.master_seed": 9})
    config = parse_config(merged)

    # Assert
    assert config.seed == 9
    assert config.base_params.experiment_name == "X"


def test_json_configs_are_accepted(write_config):
    path = write_config("run.json", json.dumps({"command": "pattern", "pattern": {"s": [1], "M": [0, 4]}}))
    assert parse_config(load_config(path, None)).pattern.s == [1]


def test_missing_system_config_is_tolerated(write_config, tmp_path):
    experiment = write_config("run.yaml", "command: pattern\n" + PATTERN_YAML)
    merged = load_config(experiment, tmp_path / "nope.yaml")
    assert "paths" not in merged


@pytest.mark.parametrize(
    "text",
    [
        "command: pattern\npattern: [1, 2\n",
        "- just\n- a list\n",
    ],
)
def test_read_yaml_errors(write_config, text):
    with pytest.raises(ConfigError):
        read_yaml(write_config("bad.yaml", text))


def test_read_yaml_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_yaml(tmp_path / "missing.yaml")


@pytest.mark.parametrize(
    "merged",
    [
        {"command": "certify", "pattern": {"s": [1]}},
        {"command": "pattern"},
        {"command": "explode", "pattern": {"s": [1]}},
        {"command": "pattern", "pattern": {"s": [1]}, "unknown_key": 1},
        {"command": "pattern", "pattern": {"s": [1]}, "schema_version": 2},
        {"command": "recover", "operator": {"sensing": "matrix"}},
        {"command": "recover", "operator": {"sensing": "dft"}},
    ],
)
def test_parse_config_errors(merged):
    with pytest.raises(ConfigError):
        parse_config(merged)


def test_parse_config_ignores_private_keys():
    config = parse_config({"command": "pattern", "pattern": {"s": [1]}, "__parent_run_name__": "x"})
    assert isinstance(config, ExperimentConfig)
    assert config.limits.enumeration_cap == 10**7


def test_config_hash_is_stable_and_sensitive():
    # Arrange
    base = {"command": "pattern", "pattern": {"s": [1, 2], "M": [0, 2, 6]}}

    # Act
    first = config_hash(parse_config(base))
    again = config_hash(parse_config(dict(reversed(list(base.items())))))
    other = config_hash(parse_config({**base, "base_params": {"master_seed": 1}}))

    # Assert
    assert first == again
    assert first != other
    assert len(first) == 64


@pytest.mark.parametrize(
    "name",
    [
        "certify_haar_wht.yaml",
        "certify_nsp.json",
        "fliptest_fourier_haar.yaml",
        "fliptest_levels_sweep.yaml",
        "generalized_flip_db3.yaml",
        "recover_image.yaml",
        "skeps_image.yaml",
    ],
)
def test_shipped_configs_validate(name):
    command = {"certify": "certify", "fliptest": "fliptest", "generalized": "fliptest",
               "recover": "recover", "skeps": "skeps"}[name.split("_")[0]]
    merged = load_config(f"config/{name}", "config/system.yaml", overrides={"command": command})
    assert parse_config(merged).command == command
