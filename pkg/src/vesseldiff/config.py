"""Declarative run configuration.

A single JSON document drives every pipeline stage. The resolved config is
hashed and the hash is embedded in each output artifact so that mismatched
checkpoint/archive/report combinations can be detected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


# Column names of the Danish Maritime Authority CSV export.
DMA_COLUMN_MAP = {
    "timestamp": "# Timestamp",
    "mmsi": "MMSI",
    "lat": "Latitude",
    "lon": "Longitude",
    "sog": "SOG",
}


@dataclass
class DataConfig:
    ais_files: list[str] = field(default_factory=list)
    column_map: dict[str, str] = field(default_factory=lambda: dict(DMA_COLUMN_MAP))
    timestamp_format: str | None = None
    roi: tuple[float, float, float, float] = (55.5, 10.3, 58.0, 13.0)  # lat_min, lon_min, lat_max, lon_max
    delta_minutes: float = 10.0
    gap_hours: float = 2.0
    min_journey_samples: int = 36
    sog_min: float = 0.2
    sog_max: float = 30.0
    history_len: int = 8
    horizon_len: int = 24
    stride: int = 1
    neighbor_threshold: float = 0.05
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0


@dataclass
class SceneConfig:
    coastline_file: str | None = None
    grid_size: int = 64
    sigma: float = 2.0
    alpha: float = 0.5
    alpha_per_window: bool = False  # resample alpha ~ U[0,1) per window instead of fixed


@dataclass
class ModelConfig:
    embed_dim: int = 64
    lstm_hidden: int = 128
    cnn_channels: tuple[int, int, int] = (32, 64, 128)
    model_dim: int = 512
    attention_heads: int = 4
    transformer_layers: int = 3
    ff_dim: int = 1024
    dtype: str = "float32"


@dataclass
class DiffusionConfig:
    total_steps: int = 100
    schedule: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 0.05


@dataclass
class SamplerConfigSection:
    stride: int = 5
    n_samples: int = 20


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-4
    batch_size: int = 256
    lr_decay: float = 0.98
    max_steps: int = 20000
    seed: int = 0
    ablation_mask: list[str] = field(default_factory=list)
    eval_every: int = 0  # 0 disables validation-based early stopping
    patience: int = 10
    checkpoint_every: int = 500
    log_every: int = 50
    threads: int = 1


@dataclass
class SyntheticConfig:
    n_trajectories: int = 64
    kinds: tuple[str, ...] = ("line", "turn", "dogleg")
    noise: float = 0.0004
    neighbor_rate: float = 0.5
    seed: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    sampler: SamplerConfigSection = field(default_factory=SamplerConfigSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    seed: int = 0

    def validate(self) -> None:
        lat_min, lon_min, lat_max, lon_max = self.data.roi
        if not (lat_max > lat_min and lon_max > lon_min):
            raise ConfigError(f"degenerate ROI {self.data.roi}")
        if self.data.history_len < 1 or self.data.horizon_len < 1:
            raise ConfigError("history_len and horizon_len must be >= 1")
        if not 0.0 < self.diffusion.beta_start < self.diffusion.beta_end < 1.0:
            raise ConfigError(
                f"need 0 < beta_start < beta_end < 1, got "
                f"({self.diffusion.beta_start}, {self.diffusion.beta_end})"
            )
        if self.diffusion.total_steps < 1:
            raise ConfigError("diffusion.total_steps must be >= 1")
        if self.diffusion.total_steps % self.sampler.stride != 0:
            raise ConfigError(
                f"sampler stride {self.sampler.stride} must divide "
                f"total diffusion steps {self.diffusion.total_steps}"
            )
        if not 0.0 <= self.scene.alpha < 1.0:
            raise ConfigError(f"scene.alpha must be in [0, 1), got {self.scene.alpha}")
        if abs(sum(self.data.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.data.split_fractions}")
        if self.model.model_dim % self.model.attention_heads != 0:
            raise ConfigError("attention head count must divide model_dim")
        bad = set(self.training.ablation_mask) - {"his", "neigh", "map"}
        if bad:
            raise ConfigError(f"unknown ablation mask entries {sorted(bad)}")
        if self.training.learning_rate <= 0 or self.training.batch_size < 1:
            raise ConfigError("learning_rate must be > 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Identity of the full resolved config; embedded in every artifact."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def compat_hash(self) -> str:
        """Identity of the sections that fix artifact compatibility.

        Checkpoints, archives and traces interoperate iff these match; training
        duration, sampler width and seeds may differ between stages.
        """
        doc = self.to_dict()
        compat = {k: doc[k] for k in ("data", "scene", "model", "diffusion")}
        canon = json.dumps(compat, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _merge_section(cls, defaults, overrides: dict):
    if not isinstance(overrides, dict):
        raise ConfigError(f"expected object for section {cls.__name__}, got {type(overrides).__name__}")
    values = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(cls)}
    for key, val in overrides.items():
        if key not in values:
            raise ConfigError(f"unknown config key '{key}' in section {cls.__name__}")
        if isinstance(values[key], tuple) and isinstance(val, list):
            val = tuple(val)
        values[key] = val
    return cls(**values)


def from_dict(doc: dict) -> RunConfig:
    cfg = RunConfig()
    sections = {
        "data": (DataConfig, cfg.data),
        "scene": (SceneConfig, cfg.scene),
        "model": (ModelConfig, cfg.model),
        "diffusion": (DiffusionConfig, cfg.diffusion),
        "sampler": (SamplerConfigSection, cfg.sampler),
        "training": (TrainingConfig, cfg.training),
        "synthetic": (SyntheticConfig, cfg.synthetic),
    }
    for key, val in doc.items():
        if key == "seed":
            cfg.seed = int(val)
        elif key in sections:
            cls, defaults = sections[key]
            setattr(cfg, key, _merge_section(cls, defaults, val))
        else:
            raise ConfigError(f"unknown top-level config key '{key}'")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return from_dict(doc)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
