import dataclasses
import logging
import os
import typing
from math import pi
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import yaml
from dotenv import load_dotenv

from classifier.mlp import TrainConfig
from data.bearing_signals import SignalRecipe
from learning.quanvolution import ANGLE_FITS, ANGLE_GAIN, ANGLE_OFFSET, check_geometry
from utils.errors import ConfigError
from utils.helpers import canonical_hash


@dataclass(frozen=True)
class RecipeConfig:
    base_frequencies: Tuple[float, ...] = (3.1, 7.4)
    noise_std: float = 0.3
    fault_impulse_period: Optional[int] = None
    impulse_amplitude: Optional[float] = None
    impulse_decay: Optional[float] = None

    def to_recipe(self, label: str) -> SignalRecipe:
        return SignalRecipe(label, self.base_frequencies, self.noise_std, self.fault_impulse_period,
                            self.impulse_amplitude, self.impulse_decay)


def _default_faulty() -> RecipeConfig:
    return RecipeConfig(fault_impulse_period=24, impulse_amplitude=0.9, impulse_decay=0.8)


@dataclass(frozen=True)
class DataConfig:
    m: int = 299
    n_train: int = 200
    signal_length: int = 192
    data_seed: int = 0
    split_seed: int = 1
    healthy: RecipeConfig = field(default_factory=RecipeConfig)
    faulty: RecipeConfig = field(default_factory=_default_faulty)


@dataclass(frozen=True)
class LevelConfig:
    window: int = 4
    stride: int = 2
    pool_size: int = 100
    layer_range: Tuple[int, int] = (1, 1)
    K: int = 4
    pca_dims: Optional[int] = None
    pca_threshold: int = 64
    pool_seed: int = 11
    cluster_seed: int = 12
    pool_window: int = 2
    pool_stride: int = 2
    angle_fit: str = "standardized"
    angle_offset: float = ANGLE_OFFSET
    angle_gain: float = ANGLE_GAIN

    @property
    def effective_pca_dims(self) -> Optional[int]:
        """PCA only applies when the embedding dimension exceeds the threshold."""
        if self.pca_dims is None or 2 ** self.window <= self.pca_threshold:
            return None
        return self.pca_dims


@dataclass(frozen=True)
class ClassifierConfig:
    batch_size: int = 32
    epochs: int = 25
    learning_rate: float = 0.001
    seed: int = 3
    hidden: Tuple[int, ...] = (64, 32)
    loss_reduction: str = "sum"

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.epochs, self.learning_rate, self.seed, self.loss_reduction)


@dataclass(frozen=True)
class PathsConfig:
    workspace: str = "workspace"


@dataclass(frozen=True)
class RuntimeConfig:
    workers: int = 1
    log_level: str = "INFO"


def _default_levels() -> Tuple[LevelConfig, ...]:
    return (LevelConfig(pool_seed=11, cluster_seed=12), LevelConfig(pool_seed=21, cluster_seed=22))


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    levels: Tuple[LevelConfig, ...] = field(default_factory=_default_levels)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)


def _scalar_ok(expected, value) -> bool:
    if isinstance(value, bool):
        return expected is bool
    if expected is int:
        return isinstance(value, int)
    if expected is float:
        return isinstance(value, (int, float))
    if expected is str:
        return isinstance(value, str)
    return True


def _check_type(expected, value, key: str):
    """
    Rejects values whose type cannot satisfy a config field annotation.
    """
    args = typing.get_args(expected)
    if typing.get_origin(expected) is typing.Union:
        if value is None and type(None) in args:
            return
        expected = next(a for a in args if a is not type(None))
        args = typing.get_args(expected)
    if typing.get_origin(expected) is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{key}' must be a list, got {value!r}")
        element = args[0] if args else None
        for item in value:
            if element is not None and not _scalar_ok(element, item):
                raise ConfigError(f"'{key}' must hold {element.__name__} values, got {item!r}")
        return
    if isinstance(expected, type) and not _scalar_ok(expected, value):
        raise ConfigError(f"'{key}' must be {expected.__name__}, got {value!r}")


def _build(cls, raw, where: str):
    """
    Instantiates a config dataclass from a mapping, rejecting unknown keys.
    """
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"'{where}' must be a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"Unknown config key '{where}.{unknown[0]}'" if where else
                          f"Unknown config key '{unknown[0]}'")
    kwargs = {}
    for name, value in raw.items():
        key = f"{where}.{name}" if where else name
        if name == "healthy":
            value = _build(RecipeConfig, value, key)
        elif name == "faulty":
            # Partial faulty sections keep the default impulse train
            if isinstance(value, dict):
                value = {**dataclasses.asdict(_default_faulty()), **value}
            value = _build(RecipeConfig, value, key)
        elif name == "levels":
            if not isinstance(value, list) or not value:
                raise ConfigError(f"'{key}' must be a non-empty list")
            value = tuple(_build(LevelConfig, lv, f"{key}[{i}]") for i, lv in enumerate(value))
        elif name in ("data", "classifier", "paths", "runtime"):
            value = _build({"data": DataConfig, "classifier": ClassifierConfig,
                            "paths": PathsConfig, "runtime": RuntimeConfig}[name], value, key)
        else:
            _check_type(known[name].type, value, key)
            if isinstance(value, list):
                value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid '{where or 'config'}': {e}")


def load_config(path: str = "config.yaml", seed_override: Optional[int] = None,
                workspace: Optional[str] = None) -> ExperimentConfig:
    """
    Loads the experiment configuration from a YAML file, then applies
    environment overrides (from a .env file if present) and CLI overrides.

    Args:
        path: YAML config file.
        seed_override: If given, every seed is re-derived from it.
        workspace: If given, replaces paths.workspace.

    Returns:
        The validated ExperimentConfig.
    """
    try:
        with open(path, "r") as config_file:
            raw = yaml.safe_load(config_file) or {}
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"Error reading {path}: {e}")

    config = _build(ExperimentConfig, raw, "")

    load_dotenv()
    env_workspace = os.getenv("QFL_WORKSPACE")
    env_workers = os.getenv("QFL_WORKERS")
    env_log_level = os.getenv("QFL_LOG_LEVEL")
    if env_workspace:
        config = dataclasses.replace(config, paths=PathsConfig(env_workspace))
    if env_workers or env_log_level:
        try:
            workers = int(env_workers) if env_workers else config.runtime.workers
        except ValueError:
            raise ConfigError(f"QFL_WORKERS must be an integer, got {env_workers!r}")
        config = dataclasses.replace(
            config, runtime=RuntimeConfig(workers, env_log_level or config.runtime.log_level)
        )

    if workspace:
        config = dataclasses.replace(config, paths=PathsConfig(workspace))
    if seed_override is not None:
        config = apply_seed_override(config, seed_override)

    validate(config)
    return config


def apply_seed_override(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    """
    Derives every seed of the experiment from one integer.
    """
    data = dataclasses.replace(config.data, data_seed=seed, split_seed=seed + 1)
    levels = tuple(
        dataclasses.replace(lv, pool_seed=seed + 100 * i + 1, cluster_seed=seed + 100 * i + 2)
        for i, lv in enumerate(config.levels, start=1)
    )
    classifier = dataclasses.replace(config.classifier, seed=seed + 7)
    logging.info(f"Seeds derived from override {seed}.")
    return dataclasses.replace(config, data=data, levels=levels, classifier=classifier)


def validate(config: ExperimentConfig):
    """
    Checks value ranges and the level shape chain before any simulation.

    Raises:
        ConfigError: Naming the offending setting.
    """
    data = config.data
    if data.m < 2:
        raise ConfigError(f"data.m must be >= 2, got {data.m}")
    if not 1 <= data.n_train < data.m:
        raise ConfigError(f"data.n_train must be in [1, {data.m - 1}], got {data.n_train}")
    try:
        data.healthy.to_recipe("healthy")
        data.faulty.to_recipe("faulty")
        config.classifier.train_config()
    except ValueError as e:
        raise ConfigError(str(e))
    if config.runtime.workers < 1:
        raise ConfigError(f"runtime.workers must be >= 1, got {config.runtime.workers}")

    for i, lv in enumerate(config.levels, start=1):
        if lv.K > lv.pool_size:
            raise ConfigError(f"levels[{i}]: K={lv.K} exceeds pool_size={lv.pool_size}")
        if lv.K < 1:
            raise ConfigError(f"levels[{i}]: K must be >= 1, got {lv.K}")
        if not 1 <= lv.window <= 10:
            raise ConfigError(f"levels[{i}]: window must be in [1, 10] qubits, got {lv.window}")
        if len(lv.layer_range) != 2 or lv.layer_range[0] < 1 or lv.layer_range[1] < lv.layer_range[0]:
            raise ConfigError(f"levels[{i}]: layer_range must be [lo, hi] with 1 <= lo <= hi")
        if lv.angle_fit not in ANGLE_FITS:
            raise ConfigError(f"levels[{i}]: angle_fit must be one of {ANGLE_FITS}, got {lv.angle_fit!r}")
        if not 0.0 < lv.angle_offset < pi or lv.angle_gain <= 0.0:
            raise ConfigError(f"levels[{i}]: angle_offset must lie in (0, pi) and angle_gain be > 0")
        dims = lv.effective_pca_dims
        if dims is not None and not 1 <= dims <= min(lv.pool_size, 2 ** lv.window):
            raise ConfigError(f"levels[{i}]: pca_dims {dims} out of range")
    validate_geometry(config)


def validate_geometry(config: ExperimentConfig) -> List[Tuple[int, int]]:
    try:
        return check_geometry(config.data.signal_length, level_geometry(config))
    except ValueError as e:
        raise ConfigError(f"Invalid level geometry: {e}")


def level_geometry(config: ExperimentConfig) -> List[Tuple[int, int, int, int, int]]:
    return [(lv.window, lv.stride, lv.K, lv.pool_window, lv.pool_stride) for lv in config.levels]


def config_hash(config: ExperimentConfig) -> str:
    """
    Digest of everything that determines results (paths and runtime excluded).
    """
    payload = dataclasses.asdict(config)
    payload.pop("paths")
    payload.pop("runtime")
    return canonical_hash(payload)
