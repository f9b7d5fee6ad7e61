"""
Analytic signed-distance shapes.

Distances are positive in free space and negative inside solid material. Every
shape works in 2D (discs, rectangles) and 3D (spheres, boxes). A ``Scene`` is
the union of its shapes and answers the same ``query`` protocol as a trained
neural field, so registration, planning and evaluation accept either.
"""
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .exceptions import DimensionError

NO_HIT = np.inf


@dataclass(frozen=True, eq=False)
class SdfQuery:
    """Batched field answer: signed distance, spatial gradient and validity mask."""
    sdf: np.ndarray
    grad: np.ndarray
    valid: np.ndarray


class SignedDistanceField(Protocol):
    def query(self, points, colors=None) -> SdfQuery:
        ...


def _as_points(points, dim):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[None, :]
    if points.shape[1] != dim:
        raise DimensionError(f'Expected {dim}D points, got shape {points.shape}')
    return points


@dataclass(frozen=True, eq=False)
class Sphere:
    """Solid ball (disc in 2D)."""
    center: np.ndarray
    radius: float
    color: tuple = (0.8, 0.3, 0.3)

    def __post_init__(self):
        object.__setattr__(self, 'center', np.asarray(self.center, dtype=np.float64))

    @property
    def dim(self):
        return self.center.shape[0]

    def distance(self, points):
        points = _as_points(points, self.dim)
        return np.linalg.norm(points - self.center, axis=1) - self.radius

    def gradient(self, points):
        points = _as_points(points, self.dim)
        offset = points - self.center
        norm = np.linalg.norm(offset, axis=1, keepdims=True)
        fallback = np.zeros_like(offset)
        fallback[:, 0] = 1.0
        return np.where(norm > 1e-12, offset / np.maximum(norm, 1e-12), fallback)

    def intersect(self, origins, directions):
        """Smallest positive ray parameter hitting the surface from outside."""
        offset = origins - self.center
        a = np.sum(directions * directions, axis=1)
        b = 2.0 * np.sum(offset * directions, axis=1)
        c = np.sum(offset * offset, axis=1) - self.radius ** 2
        disc = b * b - 4.0 * a * c
        hit = disc >= 0
        root = np.sqrt(np.where(hit, disc, 0.0))
        near = (-b - root) / (2.0 * a)
        return np.where(hit & (near > 0) & (c > 0), near, NO_HIT)


@dataclass(frozen=True, eq=False)
class Box:
    """Solid axis-aligned box (rectangle in 2D)."""
    center: np.ndarray
    half_extents: np.ndarray
    color: tuple = (0.3, 0.3, 0.8)

    def __post_init__(self):
        object.__setattr__(self, 'center', np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, 'half_extents', np.asarray(self.half_extents, dtype=np.float64))

    @property
    def dim(self):
        return self.center.shape[0]

    def distance(self, points):
        points = _as_points(points, self.dim)
        q = np.abs(points - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    def gradient(self, points):
        points = _as_points(points, self.dim)
        offset = points - self.center
        sign = np.where(offset >= 0, 1.0, -1.0)
        q = np.abs(offset) - self.half_extents
        positive = np.maximum(q, 0.0)
        norm = np.linalg.norm(positive, axis=1, keepdims=True)
        outside = sign * positive / np.maximum(norm, 1e-12)
        inside = np.zeros_like(offset)
        axis = np.argmax(q, axis=1)
        rows = np.arange(points.shape[0])
        inside[rows, axis] = sign[rows, axis]
        return np.where(norm > 1e-12, outside, inside)

    def _slabs(self, origins, directions):
        with np.errstate(divide='ignore', invalid='ignore'):
            inv = 1.0 / directions
            t1 = (self.center - self.half_extents - origins) * inv
            t2 = (self.center + self.half_extents - origins) * inv
        t1 = np.nan_to_num(t1, nan=-np.inf)
        t2 = np.nan_to_num(t2, nan=np.inf)
        t_near = np.max(np.minimum(t1, t2), axis=1)
        t_far = np.min(np.maximum(t1, t2), axis=1)
        return t_near, t_far

    def intersect(self, origins, directions):
        t_near, t_far = self._slabs(origins, directions)
        return np.where((t_near <= t_far) & (t_near > 0), t_near, NO_HIT)


@dataclass(frozen=True, eq=False)
class Room:
    """Hollow box: free inside, walls beyond the extents."""
    center: np.ndarray
    half_extents: np.ndarray
    color: tuple = (0.7, 0.7, 0.7)

    def __post_init__(self):
        object.__setattr__(self, '_box', Box(self.center, self.half_extents))
        object.__setattr__(self, 'center', self._box.center)
        object.__setattr__(self, 'half_extents', self._box.half_extents)

    @property
    def dim(self):
        return self.center.shape[0]

    def distance(self, points):
        return -self._box.distance(points)

    def gradient(self, points):
        return -self._box.gradient(points)

    def intersect(self, origins, directions):
        t_near, t_far = self._box._slabs(origins, directions)
        return np.where((t_near < 0) & (t_far > 0), t_far, NO_HIT)


@dataclass(eq=False)
class Scene:
    """Union of shapes with an optional bounding region for validity."""
    shapes: list = field(default_factory=list)
    bounds: tuple = None

    @property
    def dim(self):
        return self.shapes[0].dim if self.shapes else len(self.bounds[0])

    def add(self, shape):
        self.shapes.append(shape)
        return shape

    def _stack(self, points, method):
        return np.stack([getattr(shape, method)(points) for shape in self.shapes], axis=0)

    def distance(self, points):
        points = _as_points(points, self.dim)
        if not self.shapes:
            return np.full(points.shape[0], np.inf)
        return np.min(self._stack(points, 'distance'), axis=0)

    def nearest_shape(self, points):
        return np.argmin(self._stack(points, 'distance'), axis=0)

    def gradient(self, points):
        points = _as_points(points, self.dim)
        if not self.shapes:
            return np.zeros_like(points)
        distances = self._stack(points, 'distance')
        owner = np.argmin(distances, axis=0)
        grads = np.stack([shape.gradient(points) for shape in self.shapes], axis=0)
        return grads[owner, np.arange(points.shape[0])]

    def contains(self, points):
        points = _as_points(points, self.dim)
        if self.bounds is None:
            return np.ones(points.shape[0], dtype=bool)
        low, high = (np.asarray(b, dtype=np.float64) for b in self.bounds)
        return np.all((points >= low) & (points <= high), axis=1)

    def query(self, points, colors=None):
        points = _as_points(points, self.dim)
        return SdfQuery(self.distance(points), self.gradient(points), self.contains(points))

    def intersect(self, origins, directions):
        """Nearest hit parameter and the index of the shape hit (-1 for a miss)."""
        hits = np.stack([shape.intersect(origins, directions) for shape in self.shapes], axis=0)
        owner = np.argmin(hits, axis=0)
        t = hits[owner, np.arange(origins.shape[0])]
        return t, np.where(np.isfinite(t), owner, -1)

    def colors_of(self, owner):
        palette = np.array([shape.color for shape in self.shapes] + [(0.0, 0.0, 0.0)])
        return palette[owner]
