"""
Local frames and the topological map that links them.

Every frame owns an independent neural field expressed in its own
coordinates (the anchor pose maps frame coordinates to world coordinates).
Edges carry the relative pose between the anchors of the frames they join.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import networkx as nx
import numpy as np

from core.exceptions import ConfigError, NoRouteError
from core.geometry import Pose, rotation_angle
from field.implicit import NeuralField
from field.training import consolidate_ewc

logger = logging.getLogger(__name__)

KEYPOINT_COUNT = 512


class SpawnReason(str, Enum):
    TRANSLATION = 'translation'
    VIEWPOINT = 'viewpoint'
    FRAME_COUNT = 'frame_count'


class EdgeKind(str, Enum):
    SEQUENTIAL = 'sequential'
    LOOP = 'loop'


@dataclass(frozen=True)
class SpawnPolicy:
    max_translation: float = 3.0
    max_viewpoint: float = math.radians(30.0)
    max_frames: int = 120
    warm_start: bool = False

    def __post_init__(self):
        if self.max_translation <= 0 or self.max_viewpoint <= 0 or self.max_frames < 1:
            raise ConfigError('Spawn thresholds must be positive')


@dataclass(frozen=True)
class SpawnDecision:
    spawn: bool
    reason: Optional[SpawnReason] = None

    def __bool__(self):
        return self.spawn


@dataclass(frozen=True, eq=False)
class Keypoints:
    """Subsampled map points of one frame, in frame coordinates."""
    positions: np.ndarray
    features: np.ndarray
    anchor: Pose

    def __len__(self):
        return self.positions.shape[0]

    def world_positions(self):
        return self.anchor.apply(self.positions)


def farthest_point_indices(positions, count, seed=0):
    """Greedy farthest-point subsample starting from a seeded random point."""
    n = positions.shape[0]
    if n <= count:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = rng.integers(n)
    nearest = np.linalg.norm(positions - positions[chosen[0]], axis=1)
    for i in range(1, count):
        chosen[i] = int(np.argmax(nearest))
        nearest = np.minimum(nearest, np.linalg.norm(positions - positions[chosen[i]], axis=1))
    return np.sort(chosen)


@dataclass(eq=False)
class LocalFrame:
    id: int
    anchor_pose: Pose
    t_start: int
    field: NeuralField
    t_end: int = None
    trajectory: list = field(default_factory=list)
    path_length: float = 0.0
    spawn_reason: Optional[SpawnReason] = None
    keypoints: Keypoints = None

    def __post_init__(self):
        if self.t_end is None:
            self.t_end = self.t_start - 1

    def __str__(self):
        return f'Frame {self.id} [{self.t_start}..{self.t_end}]'

    @property
    def observation_count(self):
        return len(self.trajectory)

    def append_pose(self, observation_index, local_pose):
        """Record the frame-coordinate pose of the next observation."""
        if observation_index != self.t_end + 1:
            raise ValueError(f'{self} expected observation {self.t_end + 1}, got {observation_index}')
        if self.trajectory:
            self.path_length += float(np.linalg.norm(local_pose.translation - self.trajectory[-1].translation))
        self.trajectory.append(local_pose)
        self.t_end = observation_index

    def world_pose(self, local_pose):
        return self.anchor_pose @ local_pose

    def refresh_keypoints(self, count=KEYPOINT_COUNT, seed=0):
        store = self.field.store
        chosen = farthest_point_indices(store.positions, count, seed)
        self.keypoints = Keypoints(
            store.positions[chosen].copy(),
            store.features.detach().numpy()[chosen].copy(),
            self.anchor_pose,
        )
        return self.keypoints


@dataclass(frozen=True, eq=False)
class TopoEdge:
    from_id: int
    to_id: int
    relative_pose: Pose
    observation_span: tuple
    kind: EdgeKind = EdgeKind.SEQUENTIAL

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise ValueError('An edge must join two different frames')


@dataclass(frozen=True, eq=False)
class Route:
    frame_ids: list
    relative_poses: list

    def __len__(self):
        return len(self.frame_ids)

    def composed(self):
        """Pose of the last frame's anchor in the first frame's coordinates."""
        pose = Pose.identity()
        for step in self.relative_poses:
            pose = pose @ step
        return pose


def should_spawn(current, new_pose, policy):
    """
    Whether the observation at ``new_pose`` (frame coordinates) starts a new
    frame. Triggers are checked in the order translation, viewpoint, count.
    """
    if not current.trajectory:
        return SpawnDecision(False)
    step = float(np.linalg.norm(new_pose.translation - current.trajectory[-1].translation))
    if current.path_length + step > policy.max_translation:
        return SpawnDecision(True, SpawnReason.TRANSLATION)
    if rotation_angle(new_pose.rotation) > policy.max_viewpoint:
        return SpawnDecision(True, SpawnReason.VIEWPOINT)
    if current.observation_count >= policy.max_frames:
        return SpawnDecision(True, SpawnReason.FRAME_COUNT)
    return SpawnDecision(False)


class TopologicalMap:
    """Frames as nodes, relative anchor poses as edges."""

    def __init__(self, new_field: Callable[[Optional[NeuralField]], NeuralField] = None):
        self.frames = {}
        self.edges = []
        self.active_id = None
        self._graph = nx.Graph()
        self._new_field = new_field or (lambda previous: NeuralField())

    def __len__(self):
        return len(self.frames)

    @property
    def active(self):
        return self.frames.get(self.active_id)

    def frame(self, frame_id):
        return self.frames[frame_id]

    def add_frame(self, frame):
        self.frames[frame.id] = frame
        self._graph.add_node(frame.id)
        return frame

    def add_edge(self, edge):
        if edge.from_id not in self.frames or edge.to_id not in self.frames:
            raise KeyError(f'Edge {edge.from_id}->{edge.to_id} references an unknown frame')
        self.edges.append(edge)
        self._graph.add_edge(edge.from_id, edge.to_id, edge=edge)
        return edge

    def neighbors(self, frame_id):
        return sorted(self._graph.neighbors(frame_id)) if frame_id in self._graph else []

    @property
    def graph(self):
        return self._graph

    def is_connected(self):
        return len(self.frames) <= 1 or nx.is_connected(self._graph)

    def new_field(self, previous=None):
        return self._new_field(previous)


def spawn_frame(topo_map, world_pose, t_start, reason=None, policy=None,
                recent_batches=(), training=None, seed=0):
    """
    Anchor a new frame at ``world_pose`` and link it to the active frame.

    The previous frame's field is consolidated over ``recent_batches`` (when
    a training config is given) and frozen.
    """
    policy = policy or SpawnPolicy()
    previous = topo_map.active
    if previous is not None:
        if training is not None and any(len(b) for b in recent_batches):
            consolidate_ewc(previous.field.params, recent_batches, previous.field.store, training, seed)
        if len(previous.field.store):
            previous.refresh_keypoints(seed=seed)

    fresh = topo_map.new_field(previous.field if previous is not None and policy.warm_start else None)
    if previous is not None:
        previous.field.freeze()

    frame = LocalFrame(id=len(topo_map.frames), anchor_pose=world_pose, t_start=t_start, field=fresh,
                       spawn_reason=reason)
    topo_map.add_frame(frame)
    topo_map.active_id = frame.id

    edge = None
    if previous is not None:
        edge = topo_map.add_edge(TopoEdge(
            previous.id, frame.id, previous.anchor_pose.inverse() @ world_pose, (previous.t_end, t_start),
        ))
    logger.info(
        f'Spawned frame {frame.id} at observation {t_start} '
        f'({reason.value if reason else "initial"}), {len(topo_map)} frames'
    )
    return frame, edge


def topo_route(topo_map, from_id, to_id):
    """Fewest-edge route, ties broken by summed edge translation."""
    for frame_id in (from_id, to_id):
        if frame_id not in topo_map.frames:
            raise KeyError(f'Unknown frame {frame_id}')
    if from_id == to_id:
        return Route([from_id], [])
    graph = topo_map.graph
    lengths = [float(np.linalg.norm(e.relative_pose.translation)) for e in topo_map.edges]
    hop = 1.0 + sum(lengths)

    def weight(u, v, data):
        return hop + float(np.linalg.norm(data['edge'].relative_pose.translation))

    try:
        frame_ids = nx.shortest_path(graph, source=from_id, target=to_id, weight=weight)
    except nx.NetworkXNoPath as exc:
        raise NoRouteError(f'No route from frame {from_id} to frame {to_id}') from exc

    poses = []
    for u, v in zip(frame_ids, frame_ids[1:]):
        edge = graph.edges[u, v]['edge']
        poses.append(edge.relative_pose if edge.from_id == u else edge.relative_pose.inverse())
    return Route(frame_ids, poses)
