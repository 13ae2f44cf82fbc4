"""
Pipeline configuration: dataclasses with the documented defaults, loaded from a
single JSON document and overridable from the command line.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from utils.errors import ConfigError
from utils.skeleton import DEFAULT_JOINT_MAP, NUM_CLASSES, POSE_JOINT_COUNT, SKELETON_EDGES, MinMaxParams

logger = logging.getLogger(__name__)

SUPPORTED_DTYPES = ("float32", "float64")
# "person" averages each skeleton separately, "global" averages all 20 nodes together
VAE_POOLING = ("person", "global")


@dataclass
class PathsConfig:
    raw_dir: str = "data/raw"
    dataset_dir: str = "data/datasets"
    checkpoint_dir: str = "data/checkpoints"
    report_dir: str = "data/reports"


@dataclass
class PreprocessingConfig:
    joint_map: list = field(default_factory=lambda: list(DEFAULT_JOINT_MAP))
    window_length: int = 130
    stride: int = 26
    minmax: dict = field(default_factory=lambda: MinMaxParams().to_dict())
    transition_margin_s: float = 2.0
    fps: float = 30.0

    @property
    def minmax_params(self):
        return MinMaxParams(**self.minmax)

    @property
    def margin_frames(self):
        return int(round(self.transition_margin_s * self.fps))


@dataclass
class LstmClassifierConfig:
    layers: int = 2
    hidden_size: int = 128
    input_size: int = 2 * POSE_JOINT_COUNT * 3
    classes: int = NUM_CLASSES


@dataclass
class VaeConfig:
    channels: list = field(default_factory=lambda: [16, 32])
    latent_dim: int = 32
    temporal_kernel: int = 9
    samples: int = 1
    pool: str = "person"
    edges: list = field(default_factory=lambda: [list(edge) for edge in SKELETON_EDGES])

    @property
    def decoder_channels(self):
        return list(reversed(self.channels))


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainingConfig:
    batch_size: int = 32
    lstm_epochs: int = 30
    vae_epochs: int = 50
    head_epochs: int = 30
    seed: int = 0
    dtype: str = "float32"
    workers: int = 1
    # 0 trains on every sample of a fold; otherwise a seeded subsample of this size
    max_train_samples: int = 0


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    preprocessing: PreprocessingConfig = field(default_factory=PreprocessingConfig)
    lstm: LstmClassifierConfig = field(default_factory=LstmClassifierConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def validate(self):
        """
        Check numeric parameters are within their usable ranges

        Returns:
        PipelineConfig: self, for chaining
        """
        pre = self.preprocessing
        if pre.window_length <= 0:
            raise ConfigError(f"window_length must be positive, got {pre.window_length}")
        if not 0 < pre.stride <= pre.window_length:
            raise ConfigError(f"stride must be in (0, window_length], got {pre.stride}")
        if pre.transition_margin_s < 0:
            raise ConfigError("transition_margin_s must be non-negative")
        if pre.fps <= 0:
            raise ConfigError("fps must be positive")
        try:
            pre.minmax_params
        except ValueError as e:
            raise ConfigError(f"invalid minmax parameters: {e}") from e
        if self.lstm.layers < 1 or self.lstm.hidden_size < 1:
            raise ConfigError("lstm layers and hidden_size must be at least 1")
        if self.lstm.classes != NUM_CLASSES:
            raise ConfigError(f"lstm classes must be {NUM_CLASSES}")
        if self.lstm.input_size != 2 * POSE_JOINT_COUNT * 3:
            raise ConfigError(f"lstm input_size must be {2 * POSE_JOINT_COUNT * 3}")
        if not self.vae.channels or any(c < 1 for c in self.vae.channels):
            raise ConfigError("vae channels must be a non-empty list of positive sizes")
        if self.vae.latent_dim < 1:
            raise ConfigError("vae latent_dim must be at least 1")
        if self.vae.temporal_kernel < 1 or self.vae.temporal_kernel % 2 == 0:
            raise ConfigError("vae temporal_kernel must be a positive odd number")
        if self.vae.samples < 1:
            raise ConfigError("vae samples must be at least 1")
        if self.vae.pool not in VAE_POOLING:
            raise ConfigError(f"vae pool must be one of {VAE_POOLING}, got {self.vae.pool!r}")
        if self.optimizer.lr <= 0 or not 0 <= self.optimizer.beta1 < 1 or not 0 <= self.optimizer.beta2 < 1:
            raise ConfigError("optimizer needs lr > 0 and betas in [0, 1)")
        train = self.training
        if train.batch_size < 1 or min(train.lstm_epochs, train.vae_epochs, train.head_epochs) < 0:
            raise ConfigError("batch_size must be positive and epochs non-negative")
        if train.dtype not in SUPPORTED_DTYPES:
            raise ConfigError(f"dtype must be one of {SUPPORTED_DTYPES}, got {train.dtype}")
        if train.workers < 1:
            raise ConfigError("workers must be at least 1")
        if train.max_train_samples < 0:
            raise ConfigError("max_train_samples must be non-negative")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class SyntheticSpec:
    output_dir: str = "data/raw"
    subjects: int = 6
    recordings_per_state: int = 1
    frames_per_recording: int = 260
    fps: float = 30.0
    noise_mm: float = 5.0
    seed: int = 0
    # W: forearm oscillation in front of the chest
    work_amplitude_mm: float = 90.0
    work_frequency_hz: float = 1.2
    # P: lateral reach towards a side table
    reach_distance_mm: float = 450.0
    reach_period_s: float = 3.0
    # R: hand raised above the head and held
    raise_height_mm: float = 180.0
    pair_subjects: int = 0
    pair_recordings: int = 1
    pair_segment_frames: int = 240

    def validate(self):
        if self.subjects < 1 or self.recordings_per_state < 1:
            raise ConfigError("subjects and recordings_per_state must be at least 1")
        if self.frames_per_recording < 1:
            raise ConfigError("frames_per_recording must be at least 1")
        if self.noise_mm < 0:
            raise ConfigError("noise_mm must be non-negative")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        if self.pair_subjects == 1 or self.pair_subjects < 0:
            raise ConfigError("pair_subjects must be 0 or at least 2")
        return self


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data, cls=PipelineConfig):
    """
    Build a config dataclass from nested dictionaries

    Parameters:
    data (dict): Parsed JSON document
    cls (type): PipelineConfig or SyntheticSpec

    Returns:
    PipelineConfig | SyntheticSpec: Validated config
    """
    return _build(cls, data, cls.__name__).validate()


def load_config(path=None, cls=PipelineConfig):
    """
    Load a config document, or the defaults when no path is given

    Parameters:
    path (str | Path): JSON file
    cls (type): Config dataclass to build

    Returns:
    PipelineConfig | SyntheticSpec: Validated config
    """
    if path is None:
        return cls().validate()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    logger.info(f"Loaded configuration from {path}")
    return config_from_dict(data, cls)


def _coerce(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config, overrides):
    """
    Apply dotted-key overrides such as 'training.seed=3' on top of a config

    Parameters:
    config (PipelineConfig | SyntheticSpec): Base config
    overrides (dict | list[str]): {'training.seed': 3} or ['training.seed=3']

    Returns:
    PipelineConfig | SyntheticSpec: New validated config
    """
    if isinstance(overrides, (list, tuple)):
        parsed = {}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            key, value = item.split("=", 1)
            parsed[key.strip()] = _coerce(value)
        overrides = parsed

    data = asdict(config)
    for key, value in overrides.items():
        if value is None:
            continue
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config section in override {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key in override {key!r}")
        node[parts[-1]] = value
    return config_from_dict(data, type(config))


def config_hash(config):
    """
    Stable sha256 of a config's canonical JSON form

    Parameters:
    config (PipelineConfig | SyntheticSpec | dict): Config to hash

    Returns:
    str: Hex digest
    """
    data = config if isinstance(config, dict) else asdict(config)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()