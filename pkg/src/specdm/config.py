"""Run configuration: a strict YAML schema with one section per pipeline stage.

Every key is optional; omitted keys take the defaults below. Unknown
sections or keys raise :class:`ConfigError` naming the offending key.

.. code-block:: yaml

    seed: 0
    data:
      task: SS            # SS or CD
      n_samples: 2000
      n_test: 400
    codec:
      epochs: 6
    diffusion:
      n_steps: 4000
    synthesis:
      n_samples: 1000
    evaluation:
      extractor: band_stats
    downstream:
      real_n: 200
      syn_multipliers: [0, 1, 3, 5]
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .data import SynthLandConfig
from .diffusion.schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T
from .errors import ConfigError


@dataclass(frozen=True)
class DataSection:
    """Real data: a SynthLand recipe, or ``path`` to an existing dataset directory."""

    task: str = "SS"
    path: str | None = None
    n_samples: int = 2000
    n_test: int = 400
    split_seed: int = 0
    K: int = 4
    C: int = 8
    H: int = 32
    W: int = 32
    region_count_range: tuple[int, int] = (4, 10)
    spectrum_noise_std: float = 0.01
    illumination_strength: float = 0.3
    change_region_count_range: tuple[int, int] = (1, 3)
    min_pairwise_sad: float = 0.3

    def synthland(self, seed: int) -> SynthLandConfig:
        return SynthLandConfig(K=self.K, C=self.C, H=self.H, W=self.W, n_samples=self.n_samples,
                               region_count_range=self.region_count_range,
                               spectrum_noise_std=self.spectrum_noise_std,
                               illumination_strength=self.illumination_strength, seed=seed, task=self.task,
                               change_region_count_range=self.change_region_count_range,
                               min_pairwise_sad=self.min_pairwise_sad)


@dataclass(frozen=True)
class CodecSection:
    latent_channels: int = 4
    downsample_factor: int = 4
    lambda_sad: float = 0.1
    kl_weight: float = 1e-6
    sad_loss_enabled: bool = True
    mode: str = "two_stream"
    base_width: int = 32
    num_res_blocks: int = 1
    learning_rate: float = 4.5e-6
    scale_lr: bool = True
    batch_size: int = 64
    epochs: int = 6


@dataclass(frozen=True)
class DiffusionSection:
    timesteps: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    base_width: int = 32
    channel_mult: tuple[int, ...] = (1, 2)
    num_res_blocks: int = 1
    time_embed_dim: int = 64
    learning_rate: float = 5e-6
    scale_lr: bool = True
    batch_size: int = 64
    n_steps: int = 4000
    ema_decay: float = 0.999
    scale_latents: bool = True


@dataclass(frozen=True)
class SynthesisSection:
    n_samples: int = 1000
    batch_size: int = 256


@dataclass(frozen=True)
class EvaluationSection:
    extractor: str = "band_stats"
    export_profiles: bool = True


@dataclass(frozen=True)
class DownstreamSection:
    enabled: bool = True
    real_n: int = 200
    syn_multipliers: tuple[int, ...] = (0, 1, 3, 5)
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 10
    base_width: int = 24
    levels: int = 4
    batch_size: int = 16
    learning_rate: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    codec: CodecSection = field(default_factory=CodecSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    downstream: DownstreamSection = field(default_factory=DownstreamSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _coerce(value, hint, key):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {type(value).__name__}")
        elem = args[0]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, elem, key) for v in value)
        if len(value) != len(args):
            raise ConfigError(f"{key}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, a, key) for v, a in zip(value, args))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key {prefix + str(key)!r}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _build(hint, {} if raw[f.name] is None else raw[f.name], f"{prefix}{f.name}.")
        else:
            kwargs[f.name] = _coerce(raw[f.name], hint, prefix + f.name)
    return cls(**kwargs)


def config_from_dict(raw: dict | None) -> RunConfig:
    cfg = _build(RunConfig, raw or {}, "")
    validate_config(cfg)
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {p} is not valid YAML: {exc}") from exc
    return config_from_dict(raw)


def validate_config(cfg: RunConfig) -> None:
    if cfg.data.task not in ("SS", "CD"):
        raise ConfigError("data.task must be SS or CD")
    if cfg.data.path is None and not 0 < cfg.data.n_test < cfg.data.n_samples:
        raise ConfigError("data.n_test must lie strictly between 0 and data.n_samples")
    if cfg.codec.mode not in ("two_stream", "single_stream_baseline"):
        raise ConfigError("codec.mode must be two_stream or single_stream_baseline")
    if cfg.evaluation.extractor not in ("band_stats", "codec_latent_pool"):
        raise ConfigError("evaluation.extractor must be band_stats or codec_latent_pool")
    if not 0 < cfg.diffusion.beta_start < cfg.diffusion.beta_end < 1:
        raise ConfigError("diffusion: need 0 < beta_start < beta_end < 1")
    if cfg.synthesis.n_samples < 1:
        raise ConfigError("synthesis.n_samples must be >= 1")


def dump_config(cfg: RunConfig) -> str:
    def plain(o):
        if isinstance(o, dict):
            return {k: plain(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [plain(v) for v in o]
        return o
    return yaml.safe_dump(plain(cfg.to_dict()), sort_keys=False)
