"""
Sparse map of learned per-point features.

Map points live in a voxel hash (at most one point per voxel). A query
interpolates the features of its k nearest map points inside the 3v cube
around it with inverse-distance weights w_k = 1 / |p_k - q|.
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial import cKDTree

from core.exceptions import OutOfMapError

logger = logging.getLogger(__name__)

EXACT_HIT = 1e-9


class SemanticLabel:
    UNKNOWN = 0
    TRAVERSABLE = 1
    OBSTACLE = 2


@dataclass(frozen=True, eq=False)
class MapPoint:
    position: np.ndarray
    feature: np.ndarray
    label: int
    color: np.ndarray


@dataclass(frozen=True, eq=False)
class Neighborhood:
    """Neighbor ids (-1 padded), normalized weights and a has-neighbor mask."""
    ids: np.ndarray
    weights: np.ndarray
    valid: np.ndarray


class FeatureStore:
    """Voxel-hashed map points with trainable features."""

    def __init__(self, voxel_size=0.1, feature_dim=8, neighbors=6):
        if voxel_size <= 0:
            raise ValueError('voxel_size must be positive')
        self.voxel_size = float(voxel_size)
        self.feature_dim = int(feature_dim)
        self.neighbors = int(neighbors)
        self.positions = np.zeros((0, 3))
        self.colors = np.zeros((0, 3))
        self.labels = np.zeros(0, dtype=np.int8)
        self.features = torch.zeros((0, self.feature_dim), dtype=torch.float64, requires_grad=True)
        self._voxels = {}
        self._tree = None

    def __len__(self):
        return self.positions.shape[0]

    def voxel_keys(self, points):
        return np.floor(np.asarray(points, dtype=np.float64) / self.voxel_size).astype(np.int64)

    def has_voxel(self, key):
        return tuple(int(k) for k in key) in self._voxels

    def map_point(self, index):
        return MapPoint(
            self.positions[index].copy(),
            self.features[index].detach().numpy().copy(),
            int(self.labels[index]),
            self.colors[index].copy(),
        )

    def insert(self, positions, features, colors=None, labels=None):
        """Insert points; a point landing in an occupied voxel replaces its occupant."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        features = torch.as_tensor(features, dtype=torch.float64).reshape(-1, self.feature_dim)
        if colors is None:
            colors = np.full_like(positions, 0.5)
        if labels is None:
            labels = np.zeros(positions.shape[0], dtype=np.int8)
        keys = self.voxel_keys(positions)
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        labels = np.asarray(labels, dtype=np.int8).reshape(-1)

        # within one batch the last point of a voxel wins
        rows = np.zeros(0, dtype=np.int64)
        if keys.shape[0]:
            _, last = np.unique(keys[::-1], axis=0, return_index=True)
            rows = np.sort(keys.shape[0] - 1 - last)

        appended = []
        stored = self.features.detach().clone()
        for row in rows.tolist():
            key = tuple(keys[row].tolist())
            index = self._voxels.get(key)
            if index is None:
                self._voxels[key] = len(self) + len(appended)
                appended.append(row)
            else:
                self.positions[index] = positions[row]
                self.colors[index] = colors[row]
                self.labels[index] = labels[row]
                stored[index] = features[row]
        if appended:
            self.positions = np.concatenate([self.positions, positions[appended]])
            self.colors = np.concatenate([self.colors, colors[appended]])
            self.labels = np.concatenate([self.labels, labels[appended]])
            stored = torch.cat([stored, features[appended]])
        self.features = stored.requires_grad_(True)
        self._tree = None

    def _kdtree(self):
        if self._tree is None:
            self._tree = cKDTree(self.positions)
        return self._tree

    def neighborhood(self, points):
        """Up to k neighbors inside the 3v cube of each query, sorted by distance."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = points.shape[0]
        k = min(self.neighbors, len(self))
        if k == 0:
            return Neighborhood(
                np.full((n, 1), -1, dtype=np.int64), np.zeros((n, 1)), np.zeros(n, dtype=bool)
            )
        half = 1.5 * self.voxel_size
        distances, ids = self._kdtree().query(points, k=k, distance_upper_bound=half * np.sqrt(3.0))
        distances = distances.reshape(n, k)
        ids = ids.reshape(n, k)
        found = ids < len(self)
        safe = np.where(found, ids, 0)
        inside = np.max(np.abs(self.positions[safe] - points[:, None, :]), axis=2) <= half
        found &= inside

        with np.errstate(divide='ignore'):
            inverse = np.where(found, 1.0 / np.maximum(distances, EXACT_HIT), 0.0)
        exact = found & (distances < EXACT_HIT)
        has_exact = exact.any(axis=1)
        if has_exact.any():
            first = np.argmax(exact, axis=1)
            onehot = np.zeros_like(inverse)
            onehot[np.arange(n), first] = 1.0
            inverse = np.where(has_exact[:, None], onehot, inverse)
        total = inverse.sum(axis=1, keepdims=True)
        valid = total[:, 0] > 0
        weights = np.where(valid[:, None], inverse / np.where(total > 0, total, 1.0), 0.0)
        return Neighborhood(np.where(found, ids, -1), weights, valid)

    def gather(self, neighborhood):
        """Interpolated features as a tensor connected to ``self.features``."""
        ids = torch.as_tensor(np.maximum(neighborhood.ids, 0))
        weights = torch.as_tensor(neighborhood.weights, dtype=torch.float64)
        return (weights.unsqueeze(-1) * self.features[ids]).sum(dim=1)

    def gather_colors(self, neighborhood):
        ids = np.maximum(neighborhood.ids, 0)
        return np.sum(neighborhood.weights[..., None] * self.colors[ids], axis=1)

    def interpolate(self, query):
        """Interpolated feature at one point and the ids of the contributing neighbors."""
        hood = self.neighborhood(np.asarray(query, dtype=np.float64).reshape(1, 3))
        if not hood.valid[0]:
            raise OutOfMapError(f'No map point near {np.asarray(query).tolist()}')
        with torch.no_grad():
            feature = self.gather(hood)[0].numpy().copy()
        ids = hood.ids[0]
        return feature, ids[ids >= 0]

    def copy(self):
        other = FeatureStore(self.voxel_size, self.feature_dim, self.neighbors)
        other.positions = self.positions.copy()
        other.colors = self.colors.copy()
        other.labels = self.labels.copy()
        other.features = self.features.detach().clone().requires_grad_(True)
        other._voxels = dict(self._voxels)
        return other

    def rebuild_index(self):
        self._voxels = {tuple(key): i for i, key in enumerate(self.voxel_keys(self.positions).tolist())}
        self._tree = None


def voxel_representatives(positions, voxel_size):
    """Index of the point closest to its voxel center, one per occupied voxel."""
    keys = np.floor(positions / voxel_size).astype(np.int64)
    centers = (keys + 0.5) * voxel_size
    distance = np.linalg.norm(positions - centers, axis=1)
    order = np.lexsort((distance, keys[:, 2], keys[:, 1], keys[:, 0]))
    sorted_keys = keys[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(sorted_keys[1:] != sorted_keys[:-1], axis=1)
    return order[first]


def insert_keypoints(cloud, store, init_scale=0.01, rng_seed=0):
    """Add one map point per newly occupied voxel; trained occupants keep their features."""
    if len(cloud) == 0:
        return store
    chosen = voxel_representatives(cloud.positions, store.voxel_size)
    keys = store.voxel_keys(cloud.positions[chosen])
    fresh = np.array([not store.has_voxel(key) for key in keys], dtype=bool)
    chosen = chosen[fresh]
    if chosen.size == 0:
        return store
    rng = np.random.default_rng(rng_seed)
    features = rng.normal(0.0, init_scale, size=(chosen.size, store.feature_dim))
    store.insert(cloud.positions[chosen], features, cloud.colors[chosen])
    logger.debug(f'Inserted {chosen.size} map points ({len(store)} total)')
    return store
