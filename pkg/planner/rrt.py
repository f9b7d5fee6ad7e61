"""
Goal-biased RRT* and the conventional RRT* baseline.

Both planners share one tree-growing loop and differ only in how they sample.
The goal-biased sampler draws along the goal vector and a fan of rays rotated
by multiples of ``alpha`` about the vertical, falls back to uniform samples,
and otherwise samples the ellipsoid whose foci are the node closest to the goal
and the goal itself.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from core.exceptions import ConfigError, InvalidStartError

from .worlds import WorldMode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerConfig:
    step_size: float = 0.3
    rewire_radius: float = 1.0
    clearance: float = 0.25
    alpha: float = math.radians(15.0)
    n_alt_rays: int = 4
    goal_bias: float = 0.6
    uniform_fallback: float = 0.1
    max_iterations: int = 5000
    goal_tolerance: float = 0.2
    informed_ratio: float = 1.5
    baseline_goal_rate: float = 0.05
    up_axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, 'up_axis', tuple(float(x) for x in self.up_axis))
        positive = ('step_size', 'rewire_radius', 'clearance', 'alpha', 'max_iterations', 'goal_tolerance')
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f'{name} must be positive')
        if self.n_alt_rays < 0:
            raise ConfigError('n_alt_rays must be non-negative')
        for name in ('goal_bias', 'uniform_fallback', 'baseline_goal_rate'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f'{name} must lie in [0, 1]')
        if self.goal_bias + self.uniform_fallback > 1.0 + 1e-12:
            raise ConfigError('goal_bias + uniform_fallback must not exceed 1')
        if self.informed_ratio < 1.0:
            raise ConfigError('informed_ratio must be at least 1')
        if np.linalg.norm(self.up_axis) == 0:
            raise ConfigError('up_axis must be non-zero')


@dataclass(eq=False)
class PlanResult:
    path: np.ndarray
    length: float
    iterations: int
    tree_size: int
    runtime_ms: float
    success: bool
    failure: Optional[str] = None
    tree_nodes: Optional[np.ndarray] = field(default=None, repr=False)
    tree_parents: Optional[np.ndarray] = field(default=None, repr=False)
    tree_length: float = float('nan')

    def as_record(self):
        return {
            'success': self.success,
            'failure': self.failure,
            'length': round(float(self.length), 9),
            'tree_length': None if np.isnan(self.tree_length) else round(float(self.tree_length), 9),
            'iterations': self.iterations,
            'tree_size': self.tree_size,
            'runtime_ms': round(float(self.runtime_ms), 3),
            'path': [[round(float(x), 9) for x in p] for p in self.path],
        }


def path_length(path):
    path = np.asarray(path, dtype=np.float64)
    if len(path) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))


def _segment_samples(starts, ends, spacing):
    lengths = np.linalg.norm(ends - starts, axis=1)
    counts = np.ceil(lengths / spacing).astype(np.int64) + 1
    owner = np.repeat(np.arange(len(starts)), counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    steps = np.arange(counts.sum()) - first
    fractions = steps / np.maximum(np.repeat(counts - 1, counts), 1)
    points = starts[owner] + fractions[:, None] * (ends - starts)[owner]
    return points, owner


def points_free(points, world, delta):
    distance, known = world.clearance(points)
    explore = getattr(world, 'mode', WorldMode.STRICT) == WorldMode.EXPLORE
    free = np.where(known, distance >= delta, explore)
    return free & world.inside(points)


def segments_free(starts, ends, world, delta, spacing=None):
    """Vectorized ``collision_free`` over paired segment endpoints."""
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    ends = np.atleast_2d(np.asarray(ends, dtype=np.float64))
    if len(starts) == 0:
        return np.zeros(0, dtype=bool)
    points, owner = _segment_samples(starts, ends, spacing or delta / 2.0)
    blocked = np.bincount(owner, weights=~points_free(points, world, delta), minlength=len(starts))
    return blocked == 0


def collision_free(a, b, world, delta):
    """True when every sample of a->b at delta/2 spacing keeps clearance delta."""
    return bool(segments_free(a, b, world, delta)[0])


def ray_offsets(n_alt_rays):
    offsets = [0]
    for k in range(1, n_alt_rays + 1):
        offsets += [k, -k]
    return offsets


def rotate_about(vector, angle, up_axis):
    if angle == 0.0:
        return vector
    c, s = math.cos(angle), math.sin(angle)
    if vector.shape[0] == 2:
        return np.array([c * vector[0] - s * vector[1], s * vector[0] + c * vector[1]])
    k = np.asarray(up_axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    return vector * c + np.cross(k, vector) * s + k * (k @ vector) * (1.0 - c)


def _householder(direction):
    dim = direction.shape[0]
    v = direction - np.eye(dim)[0]
    norm = v @ v
    if norm < 1e-24:
        return np.eye(dim)
    return np.eye(dim) - 2.0 * np.outer(v, v) / norm


def sample_informed(current, goal, ratio, rng):
    """Uniform sample of the ellipsoid with foci current and goal, major axis ratio * |goal - current|."""
    dim = current.shape[0]
    c_min = float(np.linalg.norm(goal - current))
    c_max = ratio * c_min
    radii = np.full(dim, math.sqrt(max(c_max ** 2 - c_min ** 2, 0.0)) / 2.0)
    radii[0] = c_max / 2.0
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    ball = direction * rng.random() ** (1.0 / dim)
    return (current + goal) / 2.0 + _householder((goal - current) / c_min) @ (radii * ball)


def sample_goal_biased(current, goal, cfg, rng, ray_index, world=None):
    """
    One goal-biased sample. ``ray_index`` counts the ray draws made so far;
    returns ``(point, next_ray_index)``.
    """
    rng = np.random.default_rng(rng)
    current = np.asarray(current, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    goal_vector = goal - current
    distance = float(np.linalg.norm(goal_vector))
    u = rng.random()
    if u < cfg.goal_bias and distance > 0:
        offsets = ray_offsets(cfg.n_alt_rays)
        k = offsets[ray_index % len(offsets)]
        ray = rotate_about(goal_vector / distance, k * cfg.alpha, cfg.up_axis)
        return current + rng.uniform(0.0, distance) * ray, ray_index + 1
    if u < cfg.goal_bias + cfg.uniform_fallback or distance == 0:
        if world is None:
            raise ConfigError('Uniform fallback needs world bounds')
        return world.sample_uniform(rng), ray_index
    return sample_informed(current, goal, cfg.informed_ratio, rng), ray_index


class GoalBiasedSampler:
    def __init__(self, cfg):
        self.cfg = cfg
        self.ray_index = 0

    def __call__(self, closest, goal, world, rng):
        point, self.ray_index = sample_goal_biased(closest, goal, self.cfg, rng, self.ray_index, world)
        return point


class UniformSampler:
    def __init__(self, goal_rate):
        self.goal_rate = goal_rate

    def __call__(self, closest, goal, world, rng):
        if rng.random() < self.goal_rate:
            return goal.copy()
        return world.sample_uniform(rng)


class Tree:
    """RRT* tree; costs are path lengths from the root."""

    def __init__(self, root, capacity):
        self.nodes = np.empty((capacity, root.shape[0]))
        self.parents = np.full(capacity, -1, dtype=np.int64)
        self.costs = np.zeros(capacity)
        self.children = [[] for _ in range(capacity)]
        self.nodes[0] = root
        self.size = 1

    def __len__(self):
        return self.size

    def nearest(self, point):
        return int(np.argmin(np.sum((self.nodes[:self.size] - point) ** 2, axis=1)))

    def near(self, point, radius):
        d = np.linalg.norm(self.nodes[:self.size] - point, axis=1)
        index = np.flatnonzero(d <= radius)
        return index, d[index]

    def add(self, point, parent, cost):
        i = self.size
        self.nodes[i] = point
        self.parents[i] = parent
        self.costs[i] = cost
        self.children[parent].append(i)
        self.size += 1
        return i

    def reparent(self, node, parent, cost):
        self.children[self.parents[node]].remove(node)
        self.children[parent].append(node)
        self.parents[node] = parent
        delta = cost - self.costs[node]
        stack = [node]
        while stack:
            i = stack.pop()
            self.costs[i] += delta
            stack.extend(self.children[i])

    def branch(self, node):
        path = []
        while node >= 0:
            path.append(self.nodes[node])
            node = self.parents[node]
        return np.array(path[::-1])


def shortcut(path, world, delta):
    """Greedy segment skipping: from each waypoint jump to the farthest one in line of sight."""
    if len(path) <= 2:
        return path
    kept = [0]
    i = 0
    while i < len(path) - 1:
        later = np.arange(len(path) - 1, i, -1)
        free = segments_free(np.repeat(path[i:i + 1], len(later), axis=0), path[later], world, delta)
        i = int(later[np.argmax(free)]) if free.any() else i + 1
        kept.append(i)
    return path[kept]


def densify(path, step):
    if len(path) < 2:
        return path
    pieces = [path[:1]]
    for a, b in zip(path[:-1], path[1:]):
        n = max(int(math.ceil(np.linalg.norm(b - a) / step)), 1)
        pieces.append(a + np.linspace(0.0, 1.0, n + 1)[1:-1, None] * (b - a))
        pieces.append(b[None, :])
    return np.concatenate(pieces)


def _failure(start, iterations, tree, started, reason):
    logger.debug(f'Planning failed after {iterations} iterations: {reason}')
    return PlanResult(
        np.asarray(start, dtype=np.float64)[None, :], 0.0, iterations, len(tree) if tree else 0,
        (time.perf_counter() - started) * 1000.0, False, reason,
        tree.nodes[:tree.size].copy() if tree else None, tree.parents[:tree.size].copy() if tree else None,
    )


def grow(start, goal, world, cfg, sampler, rng_seed=0):
    """
    RRT* search shared by both planners. The tree branch is shortcut and
    re-densified; ``tree_length`` keeps the length of the branch as found.
    """
    started = time.perf_counter()
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    delta = cfg.clearance
    if start.shape != goal.shape or start.shape[0] != world.dim:
        raise ConfigError(f'Endpoints must be {world.dim}D points')
    if not points_free(start[None, :], world, delta)[0]:
        raise InvalidStartError(f'Start {start.tolist()} is in collision at clearance {delta}')
    if not points_free(goal[None, :], world, delta)[0]:
        return _failure(start, 0, None, started, 'goal in collision')

    rng = np.random.default_rng(rng_seed)
    tree = Tree(start, cfg.max_iterations + 2)
    closest = 0
    goal_node = None
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        sample = sampler(tree.nodes[closest], goal, world, rng)
        nearest = tree.nearest(sample)
        offset = sample - tree.nodes[nearest]
        gap = float(np.linalg.norm(offset))
        if gap < 1e-12:
            continue
        new = tree.nodes[nearest] + offset * min(1.0, cfg.step_size / gap)
        if not collision_free(tree.nodes[nearest], new, world, delta):
            continue

        candidates, distances = tree.near(new, cfg.rewire_radius)
        free = segments_free(tree.nodes[candidates], np.repeat(new[None, :], len(candidates), axis=0), world, delta)
        through = tree.costs[candidates] + distances
        through[~free] = np.inf
        best = int(np.argmin(through))
        if not np.isfinite(through[best]):
            parent, cost = nearest, tree.costs[nearest] + float(np.linalg.norm(new - tree.nodes[nearest]))
        else:
            parent, cost = int(candidates[best]), float(through[best])
        node = tree.add(new, parent, cost)

        for other, d, ok in zip(candidates, distances, free):
            if ok and other != parent and cost + d < tree.costs[other] - 1e-12:
                tree.reparent(int(other), node, cost + d)

        if np.sum((new - goal) ** 2) < np.sum((tree.nodes[closest] - goal) ** 2):
            closest = node
        to_goal = float(np.linalg.norm(goal - new))
        if to_goal <= cfg.goal_tolerance and collision_free(new, goal, world, delta):
            goal_node = node if to_goal < 1e-12 else tree.add(goal, node, cost + to_goal)
            break

    if goal_node is None:
        return _failure(start, iterations, tree, started, 'iteration budget exhausted')

    path = tree.branch(goal_node)
    searched = path_length(path)
    path = densify(shortcut(path, world, delta), cfg.step_size)
    runtime = (time.perf_counter() - started) * 1000.0
    logger.debug(f'Reached goal after {iterations} iterations, tree size {len(tree)}, {runtime:.1f} ms')
    return PlanResult(
        path, path_length(path), iterations, len(tree), runtime, True, None,
        tree.nodes[:tree.size].copy(), tree.parents[:tree.size].copy(), searched,
    )


def plan(start, goal, world, cfg=None, rng_seed=0):
    """Goal-biased RRT* from ``start`` to ``goal``; the path is shortcut-smoothed."""
    cfg = cfg or PlannerConfig()
    return grow(start, goal, world, cfg, GoalBiasedSampler(cfg), rng_seed)


def baseline_plan(start, goal, world, cfg=None, rng_seed=0):
    """Conventional RRT*: uniform samples with the usual small goal-sample rate."""
    cfg = cfg or PlannerConfig()
    return grow(start, goal, world, cfg, UniformSampler(cfg.baseline_goal_rate), rng_seed)
