"""
Worlds the planner can query for clearance.

A world answers ``clearance(points) -> (distance, known)`` for planning-space
points. Analytic worlds hold discs/spheres and boxes; field worlds read one or
more signed-distance fields (trained frames or analytic scenes) through a
planning plane embedded in 3D.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import yaml
from django.conf import settings

from core.exceptions import ConfigError
from core.geometry import Pose
from core.shapes import Box, Scene, Sphere

logger = logging.getLogger(__name__)


class WorldMode(str, Enum):
    STRICT = 'strict'
    EXPLORE = 'explore'


def _bounds(bounds):
    low, high = (np.asarray(b, dtype=np.float64) for b in bounds)
    if low.shape != high.shape or np.any(high <= low):
        raise ConfigError(f'Invalid world bounds {bounds}')
    return low, high


class BoundedWorld:
    bounds = None

    @property
    def dim(self):
        return self.bounds[0].shape[0]

    def inside(self, points):
        low, high = self.bounds
        return np.all((points >= low) & (points <= high), axis=1)

    def sample_uniform(self, rng, size=None):
        low, high = self.bounds
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(low, high, size=shape)


@dataclass(eq=False)
class AnalyticWorld(BoundedWorld):
    """Bounded region with solid obstacles, all known."""
    name: str
    bounds: tuple
    obstacles: list = field(default_factory=list)
    start: np.ndarray = None
    goal: np.ndarray = None

    def __post_init__(self):
        self.bounds = _bounds(self.bounds)
        for endpoint in ('start', 'goal'):
            value = getattr(self, endpoint)
            if value is not None:
                setattr(self, endpoint, np.asarray(value, dtype=np.float64))
        self._scene = Scene(self.obstacles)

    def clearance(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, self.dim)
        if self.obstacles:
            distance = self._scene.distance(points)
        else:
            distance = np.full(points.shape[0], np.inf)
        return distance, np.ones(points.shape[0], dtype=bool)

    def without_obstacles(self):
        return AnalyticWorld(self.name, self.bounds, [], self.start, self.goal)

    def as_record(self):
        obstacles = []
        for shape in self.obstacles:
            if isinstance(shape, Sphere):
                kind = 'disc' if shape.dim == 2 else 'sphere'
                obstacles.append({'type': kind, 'center': shape.center.tolist(), 'radius': float(shape.radius)})
            else:
                obstacles.append({
                    'type': 'box', 'center': shape.center.tolist(), 'half_extents': shape.half_extents.tolist(),
                })
        record = {
            'name': self.name,
            'bounds': [self.bounds[0].tolist(), self.bounds[1].tolist()],
            'obstacles': obstacles,
        }
        if self.start is not None:
            record['start'] = self.start.tolist()
        if self.goal is not None:
            record['goal'] = self.goal.tolist()
        return record

    @classmethod
    def from_record(cls, record):
        unknown = set(record) - {'name', 'bounds', 'obstacles', 'start', 'goal'}
        if unknown:
            raise ConfigError(f'Unknown world keys: {sorted(unknown)}')
        obstacles = []
        for item in record.get('obstacles') or []:
            kind = item.get('type')
            if kind in ('disc', 'sphere'):
                obstacles.append(Sphere(item['center'], float(item['radius'])))
            elif kind == 'box':
                obstacles.append(Box(item['center'], item['half_extents']))
            else:
                raise ConfigError(f'Unknown obstacle type {kind!r}')
        return cls(record.get('name', 'world'), record['bounds'], obstacles,
                   record.get('start'), record.get('goal'))


def load_world(name_or_path):
    """World from a YAML path, or by name from IMPLICITNAV_WORLDS_DIR."""
    path = Path(name_or_path)
    if not path.suffix:
        path = Path(settings.IMPLICITNAV_WORLDS_DIR) / f'{name_or_path}.yaml'
    if not path.exists():
        raise ConfigError(f'World file not found: {path}')
    with open(path, encoding='utf-8') as f:
        record = yaml.safe_load(f) or {}
    record.setdefault('name', path.stem)
    return AnalyticWorld.from_record(record)


@dataclass(frozen=True, eq=False)
class PlanePatch:
    """Planning plane origin + u e_u + v e_v inside a 3D field frame."""
    origin: np.ndarray
    u_axis: np.ndarray = (1.0, 0.0, 0.0)
    v_axis: np.ndarray = (0.0, 0.0, 1.0)

    def __post_init__(self):
        for name in ('origin', 'u_axis', 'v_axis'):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    def to_3d(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return self.origin + points[:, :1] * self.u_axis + points[:, 1:] * self.v_axis

    def to_2d(self, points):
        offset = np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.origin
        return np.stack([offset @ self.u_axis, offset @ self.v_axis], axis=1)


@dataclass(frozen=True, eq=False)
class FieldMember:
    """A field plus the pose mapping planning coordinates into the field's frame."""
    sdf: object
    to_field: Pose = field(default_factory=Pose.identity)


@dataclass(eq=False)
class FieldWorld(BoundedWorld):
    """
    Clearance from signed-distance fields. With several members a point is
    known when any member knows it, and its clearance is the smallest one
    reported by the members that know it.
    """
    members: list
    bounds: tuple
    plane: PlanePatch = None
    mode: WorldMode = WorldMode.STRICT
    name: str = 'field'

    def __post_init__(self):
        self.bounds = _bounds(self.bounds)
        self.mode = WorldMode(self.mode)
        expected = 2 if self.plane is not None else 3
        if self.dim != expected:
            raise ConfigError(f'Field world bounds must be {expected}D')

    @classmethod
    def single(cls, sdf, bounds, plane=None, mode=WorldMode.STRICT, name='field'):
        return cls([FieldMember(sdf)], bounds, plane, mode, name)

    def clearance(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, self.dim)
        spatial = self.plane.to_3d(points) if self.plane is not None else points
        distance = np.full(points.shape[0], np.inf)
        known = np.zeros(points.shape[0], dtype=bool)
        for member in self.members:
            answer = member.sdf.query(member.to_field.apply(spatial))
            valid = np.asarray(answer.valid, dtype=bool) & ~np.isnan(answer.sdf)
            distance[valid] = np.minimum(distance[valid], answer.sdf[valid])
            known |= valid
        return distance, known
