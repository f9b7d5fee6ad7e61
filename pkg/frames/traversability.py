"""Geometric traversability: the dominant horizontal plane of a frame is floor."""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.exceptions import ConfigError, InsufficientDataError
from field.features import SemanticLabel

logger = logging.getLogger(__name__)

MIN_POINTS = 100


@dataclass(frozen=True)
class TraversabilityConfig:
    max_tilt: float = math.radians(15.0)
    inlier_distance: float = 0.05
    iterations: int = 200
    min_inlier_fraction: float = 0.2
    up_axis: tuple = (0.0, -1.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'up_axis', tuple(float(x) for x in self.up_axis))
        if np.linalg.norm(self.up_axis) == 0:
            raise ConfigError('up_axis must be non-zero')
        if self.inlier_distance <= 0 or self.iterations < 1:
            raise ConfigError('inlier_distance and iterations must be positive')


@dataclass(frozen=True, eq=False)
class PlaneFit:
    normal: np.ndarray
    offset: float
    inliers: np.ndarray


@dataclass(frozen=True, eq=False)
class TraversabilityResult:
    labels: np.ndarray
    plane: Optional[PlaneFit]
    warning: Optional[str] = None

    @property
    def traversable_fraction(self):
        if self.labels.size == 0:
            return 0.0
        return float(np.mean(self.labels == SemanticLabel.TRAVERSABLE))


def fit_horizontal_plane(points, cfg):
    """Seeded RANSAC restricted to planes whose normal is within ``max_tilt`` of the up axis."""
    up = np.asarray(cfg.up_axis) / np.linalg.norm(cfg.up_axis)
    rng = np.random.default_rng(cfg.seed)
    n = points.shape[0]
    min_cos = math.cos(cfg.max_tilt)

    triples = rng.integers(0, n, size=(cfg.iterations, 3))
    first, second, third = (points[triples[:, i]] for i in range(3))
    normals = np.cross(second - first, third - first)
    lengths = np.linalg.norm(normals, axis=1)
    usable = lengths > 1e-9
    normals[usable] /= lengths[usable, None]
    usable &= np.abs(normals @ up) >= min_cos

    best = None
    best_count = 0
    for i in np.flatnonzero(usable):
        normal = normals[i]
        offset = -float(normal @ first[i])
        inliers = np.abs(points @ normal + offset) < cfg.inlier_distance
        count = int(np.count_nonzero(inliers))
        if count > best_count:
            best, best_count = (normal, offset, inliers), count

    if best is None or best_count < cfg.min_inlier_fraction * n:
        return None
    normal, offset, inliers = best
    if normal @ up < 0:
        normal, offset = -normal, -offset
    return PlaneFit(normal, offset, inliers)


def label_traversable(frame, cfg=None):
    """Label the frame's map points traversable (on the floor plane) or obstacle."""
    cfg = cfg or TraversabilityConfig()
    store = frame.field.store
    if len(store) < MIN_POINTS:
        raise InsufficientDataError(f'{frame} has {len(store)} map points, need {MIN_POINTS}')
    world = frame.anchor_pose.apply(store.positions)
    plane = fit_horizontal_plane(world, cfg)

    labels = np.full(len(store), SemanticLabel.OBSTACLE, dtype=np.int8)
    warning = None
    if plane is None:
        warning = f'No horizontal plane found in {frame}'
        logger.warning(warning)
    else:
        labels[plane.inliers] = SemanticLabel.TRAVERSABLE
        logger.debug(f'{frame}: {np.count_nonzero(plane.inliers)} of {len(store)} map points traversable')
    store.labels = labels
    return TraversabilityResult(labels, plane, warning)
