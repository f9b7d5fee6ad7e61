"""
Run configuration: one section per module, loaded from and dumped to YAML.

A config file holds any subset of the sections below; missing keys keep their
defaults and unknown keys are rejected. Presets live in
``IMPLICITNAV_PRESETS_DIR`` as ``<name>.yaml``.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml
from django.conf import settings

from core.exceptions import ConfigError
from field.network import Architecture
from field.training import TrainingConfig
from frames.graph import SpawnPolicy
from frames.similarity import LoopConfig
from frames.traversability import TraversabilityConfig
from planner.rrt import PlannerConfig
from registration.lm import RegistrationConfig
from sampling.sampler import SamplerConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MapConfig:
    voxel_size: float = 0.1
    neighbors: int = 6
    feature_init_scale: float = 0.01
    keypoint_radius: float = 0.1

    def __post_init__(self):
        if self.voxel_size <= 0 or self.neighbors < 1 or self.keypoint_radius <= 0:
            raise ConfigError('voxel_size, neighbors and keypoint_radius must be positive')


@dataclass(frozen=True)
class ReplayConfig:
    capacity: int = 2_000_000
    min_per_frame: int = 64

    def __post_init__(self):
        if self.capacity < 1 or self.min_per_frame < 0:
            raise ConfigError('Replay capacity must be positive')


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    max_frames: int = 0  # 0 reads the whole sequence
    degraded_fraction: float = 0.1
    consolidate_every_round: bool = True
    label_traversability: bool = True

    def __post_init__(self):
        if self.max_frames < 0:
            raise ConfigError('max_frames must be non-negative')
        if not 0.0 <= self.degraded_fraction <= 1.0:
            raise ConfigError('degraded_fraction must lie in [0, 1]')


SECTIONS = {
    'sampler': SamplerConfig,
    'replay': ReplayConfig,
    'map': MapConfig,
    'network': Architecture,
    'training': TrainingConfig,
    'registration': RegistrationConfig,
    'spawn': SpawnPolicy,
    'loop': LoopConfig,
    'traversability': TraversabilityConfig,
    'planner': PlannerConfig,
    'run': RunSettings,
}


@dataclass(frozen=True)
class RunConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    map: MapConfig = field(default_factory=MapConfig)
    network: Architecture = field(default_factory=Architecture)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    spawn: SpawnPolicy = field(default_factory=SpawnPolicy)
    loop: LoopConfig = field(default_factory=LoopConfig)
    traversability: TraversabilityConfig = field(default_factory=TraversabilityConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def __post_init__(self):
        if self.network.feature_dim < 1:
            raise ConfigError('network.feature_dim must be positive')

    @classmethod
    def from_dict(cls, data):
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError('A run config must be a mapping of sections')
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f'Unknown config sections: {sorted(unknown)}')
        return cls(**{name: _section(name, data.get(name)) for name in SECTIONS})

    def as_dict(self):
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = {
                f.name: _plain(getattr(section, f.name)) for f in dataclasses.fields(section)
            }
        return out

    def replace(self, **sections):
        """Copy with some fields replaced, e.g. ``replace(run={'seed': 3})``."""
        data = self.as_dict()
        for name, values in sections.items():
            if name not in SECTIONS:
                raise ConfigError(f'Unknown config section {name!r}')
            data[name].update(values)
        return RunConfig.from_dict(data)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def _section(name, values):
    cls = SECTIONS[name]
    values = values or {}
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f'Unknown keys in section {name!r}: {sorted(unknown)}')
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f'Invalid section {name!r}: {exc}') from exc


def load_config(path=None, preset=None):
    """Preset first (if any), then the file on top of it."""
    data = {}
    if preset:
        data = _read(Path(settings.IMPLICITNAV_PRESETS_DIR) / f'{preset}.yaml')
    if path:
        for name, values in _read(Path(path)).items():
            if not isinstance(values, dict):
                raise ConfigError(f'Section {name!r} must be a mapping')
            data.setdefault(name, {})
            data[name] = {**(data[name] or {}), **values}
    return RunConfig.from_dict(data)


def _read(path):
    if not path.exists():
        raise ConfigError(f'Config file not found: {path}')
    with open(path, encoding='utf-8') as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigError(f'{path} does not hold a mapping of sections')
    return data


def dump_config(config, path=None):
    text = yaml.safe_dump(config.as_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text, encoding='utf-8')
    return text
