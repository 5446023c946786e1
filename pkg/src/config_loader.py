import hashlib
import json
import logging
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from data_models import SolveOptions, WaveletSpec
from exceptions import ConfigError

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsConfig(_Strict):
    mlflow_tracking_uri: str = "file:./mlruns"
    log_dir: str = "logs"
    out_dir: str = "results"


class LimitsConfig(_Strict):
    materialize_cap: int = Field(2**22, ge=1)
    enumeration_cap: int = Field(10**7, ge=1)
    kernel_cap: int = Field(1, ge=0)
    oracle_max_n: int = Field(16, ge=1)


class TrackingConfig(_Strict):
    enabled: bool = False
    require_clean_git: bool = False


class BaseParams(_Strict):
    experiment_name: str = "SparsityInLevels"
    master_seed: int = Field(0, ge=0)


class OperatorConfig(_Strict):
    """Sensing transform composed with an inverse sparsifying transform, on n samples or side x side images."""
    sensing: Literal["dft", "wht", "identity", "matrix"] = "dft"
    ordering: str | None = None
    wavelet: WaveletSpec | None = None
    n: int | None = Field(None, ge=1)
    dims: Literal[1, 2] = 1
    matrix_path: str | None = None

    @model_validator(mode="after")
    def size_is_known(self):
        if self.sensing == "matrix" and not self.matrix_path:
            raise ValueError("sensing 'matrix' needs matrix_path")
        if self.sensing != "matrix" and self.n is None:
            raise ValueError(f"sensing '{self.sensing}' needs n")
        return self


class SamplingConfig(_Strict):
    scheme: Literal["full", "multilevel"] = "full"
    boundaries: list[int] | None = None
    counts: list[int] | None = None
    fractions: list[float] | None = None
    seed: int = 0


class PatternConfig(_Strict):
    s: list[int]
    M: list[int] | None = None


class SignalConfig(_Strict):
    kind: Literal["sparse", "piecewise", "file"] = "sparse"
    path: str | None = None
    complex_valued: bool = False
    seed: int = 0
    transform: bool = Field(False, description="Apply the sparsifying transform to the signal first.")


class CertifyConfig(_Strict):
    quantity: Literal["ripl", "rip", "ripl-lower", "recovery", "kernel", "nsp", "bounds"] = "ripl"
    s: int | None = None
    budget: int = Field(200, ge=1)
    trials: int = Field(10_000, ge=1)
    rho: float | None = None
    tau: float = 1.0
    norm: Literal["l2", "l1"] = "l2"
    sigma: float = 0.0
    epsilon: float = 0.0


class MoverConfig(_Strict):
    level: int | None = None
    count: int | None = None
    refill: bool = False


class FlipConfig(_Strict):
    mode: Literal["single", "sweep", "generalized"] = "single"
    permutation: Literal["global-reverse", "level-reverse", "level-random", "identity"] = "global-reverse"
    count: int = Field(100, ge=1)
    epsilon: float = Field(0.0, ge=0)
    weights_base: float = Field(2.0, ge=1)
    weighted: bool = False
    thresholds: list[float] | None = None  # absolute magnitudes; default: fractions of max|w|
    mover: MoverConfig = MoverConfig()


class RecoverConfig(_Strict):
    epsilon: float = Field(0.0, ge=0)
    noise: float = Field(0.0, ge=0, description="Standard deviation of added Gaussian measurement noise.")
    weights_base: float | None = None


class SkepsConfig(_Strict):
    input: str | None = None
    epsilons: list[float] = [0.5, 0.75, 0.9, 0.95, 0.99, 0.999]


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    batch_name: str = "run"
    command: Literal["certify", "fliptest", "recover", "skeps", "pattern"]
    base_params: BaseParams = BaseParams()
    paths: PathsConfig = PathsConfig()
    timezone: str | None = None
    limits: LimitsConfig = LimitsConfig()
    tracking: TrackingConfig = TrackingConfig()
    threads: int = Field(1, ge=1)
    operator: OperatorConfig | None = None
    sampling: SamplingConfig = SamplingConfig()
    pattern: PatternConfig | None = None
    solver: SolveOptions = SolveOptions()
    signal: SignalConfig = SignalConfig()
    certify: CertifyConfig = CertifyConfig()
    fliptest: FlipConfig = FlipConfig()
    recover: RecoverConfig = RecoverConfig()
    skeps: SkepsConfig = SkepsConfig()

    @model_validator(mode="after")
    def command_has_inputs(self):
        if self.command in ("certify", "fliptest", "recover") and self.operator is None:
            raise ValueError(f"command '{self.command}' needs an operator block")
        if self.command in ("certify", "fliptest", "pattern") and self.pattern is None:
            raise ValueError(f"command '{self.command}' needs a pattern block")
        return self

    @property
    def seed(self) -> int:
        return self.base_params.master_seed


def read_yaml(path: str | Path) -> dict:
    try:
        with open(path, "r") as f:
            loaded = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: '{path}'") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file '{path}' is not valid YAML/JSON: {e}") from e
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"Config file '{path}' must hold a mapping, got {type(loaded).__name__}")
    return loaded


def load_config(
    experiment_config_path,
    system_config_path="config/system.yaml",
    overrides: dict | None = None,
) -> dict:
    """
    Loads both system and experiment configurations and merges them.
    Experiment-specific configs will override system-level configs.
    A missing system config is tolerated.
    """
    system_config = {}
    if system_config_path and Path(system_config_path).exists():
        logging.info(f"Loading system config from: {system_config_path}")
        system_config = read_yaml(system_config_path)

    logging.info(f"Loading experiment config from: {experiment_config_path}")
    experiment_config = read_yaml(experiment_config_path)

    merged_config = {**system_config, **experiment_config}
    for key, value in (overrides or {}).items():
        section, _, field = key.partition(".")
        if field:
            merged_config[section] = {**merged_config.get(section, {}), field: value}
        else:
            merged_config[key] = value

    merged_config["__parent_run_name__"] = Path(experiment_config_path).stem
    return merged_config


def parse_config(merged_config: dict) -> ExperimentConfig:
    """Validates a merged config dict; every failure becomes a ConfigError."""
    data = {k: v for k, v in merged_config.items() if not k.startswith("__")}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment config:\n{e}") from e
    except ValueError as e:
        raise ConfigError(f"Invalid experiment config: {e}") from e


def config_hash(config: ExperimentConfig) -> str:
    """sha256 over the canonical JSON form of the validated config."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
