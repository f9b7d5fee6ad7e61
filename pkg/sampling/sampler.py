"""
Self-supervised SDF samples from one observation.

Every observed surface point p, seen from camera position e at depth
d = |p - e|, yields samples along its ray, ray(l) = e + l (p - e):

* front samples, l in (0.3, 0.99), labelled (1 - l) d > 0 (free space);
* behind samples, l in (1.01, 1 + l_b), labelled (1 - l) d < 0;
* surface samples on the disk of radius r around p perpendicular to the
  point-to-camera direction, labelled 0.
"""
import logging
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from core.exceptions import ConfigError

logger = logging.getLogger(__name__)

MIN_DEPTH = 1e-6


class SampleSource(IntEnum):
    SURFACE = 0
    FRONT = 1
    BEHIND = 2


class TrainingSample(NamedTuple):
    position: np.ndarray
    color: np.ndarray
    sdf_label: float
    source_tag: SampleSource
    frame_index: int


@dataclass(frozen=True)
class SamplerConfig:
    """Per-point sample counts and ray ranges."""
    n_front: int = 2
    n_behind: int = 1
    n_surface: int = 1
    front_range: tuple = (0.3, 0.99)
    behind_band: float = 0.1  # l_b
    surface_radius: float = 0.05  # r, meters
    dense_factor: int = 4

    def __post_init__(self):
        object.__setattr__(self, 'front_range', tuple(float(x) for x in self.front_range))
        low, high = self.front_range
        if not 0.0 < low < high < 1.0:
            raise ConfigError(f'front_range must satisfy 0 < low < high < 1, got {self.front_range}')
        if self.behind_band <= 0.01:
            raise ConfigError('behind_band must exceed 0.01')
        if self.surface_radius < 0:
            raise ConfigError('surface_radius must be non-negative')
        if self.dense_factor < 1:
            raise ConfigError('dense_factor must be at least 1')
        if min(self.n_front, self.n_behind, self.n_surface) < 0:
            raise ConfigError('Sample counts must be non-negative')

    @property
    def behind_range(self):
        return (1.01, 1.0 + self.behind_band)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Columnar batch of training samples."""
    positions: np.ndarray
    colors: np.ndarray
    sdf: np.ndarray
    source: np.ndarray
    frame_index: np.ndarray
    skipped: int = 0

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, index):
        return TrainingSample(
            self.positions[index],
            self.colors[index],
            float(self.sdf[index]),
            SampleSource(int(self.source[index])),
            int(self.frame_index[index]),
        )

    def subset(self, index):
        return SampleSet(
            self.positions[index],
            self.colors[index],
            self.sdf[index],
            self.source[index],
            self.frame_index[index],
        )

    @classmethod
    def empty(cls):
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0),
            np.zeros(0, dtype=np.int8), np.zeros(0, dtype=np.int64),
        )

    @classmethod
    def concatenate(cls, sets):
        sets = [s for s in sets if s is not None]
        if not sets:
            return cls.empty()
        return cls(
            np.concatenate([s.positions for s in sets]),
            np.concatenate([s.colors for s in sets]),
            np.concatenate([s.sdf for s in sets]),
            np.concatenate([s.source for s in sets]),
            np.concatenate([s.frame_index for s in sets]),
            sum(s.skipped for s in sets),
        )


def _rays(cloud, camera_origin):
    origin = np.asarray(camera_origin, dtype=np.float64)
    if origin.shape != (3,) or not np.all(np.isfinite(origin)):
        raise ValueError('camera_origin must be a finite 3-vector')
    offsets = cloud.positions - origin
    depths = np.linalg.norm(offsets, axis=1)
    keep = depths >= MIN_DEPTH
    return origin, offsets[keep], depths[keep], keep, int(np.count_nonzero(~keep))


def _ray_batch(origin, offsets, depths, colors, count, l_range, source, frame_index, rng):
    if count == 0 or offsets.shape[0] == 0:
        return SampleSet.empty()
    ratios = rng.uniform(l_range[0], l_range[1], size=(offsets.shape[0], count))
    positions = origin + ratios[..., None] * offsets[:, None, :]
    labels = (1.0 - ratios) * depths[:, None]
    n = positions.shape[0] * count
    return SampleSet(
        positions.reshape(n, 3),
        np.repeat(colors, count, axis=0),
        labels.reshape(n),
        np.full(n, source, dtype=np.int8),
        np.full(n, frame_index, dtype=np.int64),
    )


def sample_rays(cloud, camera_origin, cfg, rng_seed, frame_index=0):
    """Front and behind samples along the camera rays through every point."""
    if len(cloud) == 0:
        raise ValueError('Cannot sample an empty cloud')
    origin, offsets, depths, keep, skipped = _rays(cloud, camera_origin)
    colors = cloud.colors[keep]
    rng = np.random.default_rng(rng_seed)
    front = _ray_batch(
        origin, offsets, depths, colors, cfg.n_front, cfg.front_range,
        SampleSource.FRONT, frame_index, rng,
    )
    behind = _ray_batch(
        origin, offsets, depths, colors, cfg.n_behind, cfg.behind_range,
        SampleSource.BEHIND, frame_index, rng,
    )
    if skipped:
        logger.debug(f'Skipped {skipped} zero-depth points while ray sampling')
    return replace(SampleSet.concatenate([front, behind]), skipped=skipped)


def concentric_disk(u1, u2):
    """Map the unit square onto the unit disk preserving uniform area density."""
    a = 2.0 * u1 - 1.0
    b = 2.0 * u2 - 1.0
    use_a = np.abs(a) > np.abs(b)
    radius = np.where(use_a, a, b)
    with np.errstate(divide='ignore', invalid='ignore'):
        phi = np.where(
            use_a,
            (np.pi / 4.0) * (b / a),
            (np.pi / 2.0) - (np.pi / 4.0) * (a / b),
        )
    phi = np.nan_to_num(phi)
    return radius * np.cos(phi), radius * np.sin(phi)


def plane_basis(normals):
    """Two unit tangents spanning the plane orthogonal to each normal."""
    helper = np.zeros_like(normals)
    axis = np.argmin(np.abs(normals), axis=1)
    helper[np.arange(normals.shape[0]), axis] = 1.0
    first = np.cross(normals, helper)
    first /= np.linalg.norm(first, axis=1, keepdims=True)
    second = np.cross(normals, first)
    return first, second


def sample_surface_plane(cloud, camera_origin, cfg, rng_seed, frame_index=0):
    """Zero-labelled samples on a disk around every point, facing the camera."""
    if len(cloud) == 0:
        raise ValueError('Cannot sample an empty cloud')
    origin, offsets, depths, keep, skipped = _rays(cloud, camera_origin)
    count = cfg.n_surface
    if count == 0 or offsets.shape[0] == 0:
        return replace(SampleSet.empty(), skipped=skipped)
    normals = -offsets / depths[:, None]
    first, second = plane_basis(normals)
    rng = np.random.default_rng(rng_seed)
    x, y = concentric_disk(rng.random((offsets.shape[0], count)), rng.random((offsets.shape[0], count)))
    x *= cfg.surface_radius
    y *= cfg.surface_radius
    centers = cloud.positions[keep]
    positions = centers[:, None, :] + x[..., None] * first[:, None, :] + y[..., None] * second[:, None, :]
    n = positions.shape[0] * count
    return SampleSet(
        positions.reshape(n, 3),
        np.repeat(cloud.colors[keep], count, axis=0),
        np.zeros(n),
        np.full(n, SampleSource.SURFACE, dtype=np.int8),
        np.full(n, frame_index, dtype=np.int64),
        skipped,
    )


def sample_observation(cloud, camera_origin, cfg, rng_seed, frame_index=0):
    """All samples generated from one registered observation."""
    rays = sample_rays(cloud, camera_origin, cfg, rng_seed, frame_index)
    plane = sample_surface_plane(cloud, camera_origin, cfg, rng_seed + 1, frame_index)
    return replace(SampleSet.concatenate([rays, plane]), skipped=rays.skipped)
