"""
The mapping loop.

Each observation is backprojected, registered against the active frame's
field (seeded with a constant-velocity guess), checked against the spawn
policy, sampled, inserted into the frame's feature store and, on the training
cadence, used to train the frame's field. Poses are tracked in the active
frame's coordinates; world poses are the anchor composed with them.
"""
import logging
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
from django.conf import settings

from core.exceptions import (
    DivergenceError,
    EmptyInputError,
    InsufficientDataError,
    InsufficientOverlapError,
    SingularSystemError,
)
from core.geometry import Pose, backproject, transform_cloud
from field.features import FeatureStore, insert_keypoints
from field.implicit import NeuralField
from field.network import NetworkParams
from field.training import adaptive_train, consolidate_ewc
from frames.graph import TopologicalMap, should_spawn, spawn_frame
from frames.similarity import loop_check
from frames.traversability import label_traversable
from registration.lm import constant_velocity, register
from sampling.replay import ReplayBuffer
from sampling.sampler import sample_observation

from .config import RunConfig

logger = logging.getLogger(__name__)

STAGES = ('sampling', 'training', 'registration')
RECENT_BATCHES = 4


@dataclass
class ObservationRecord:
    index: int
    timestamp: float
    frame_id: int
    points: int = 0
    sampling_ms: float = 0.0
    training_ms: float = 0.0
    registration_ms: float = 0.0
    lm_iterations: int = 0
    rmse: Optional[float] = None
    trained: bool = False
    spawn_reason: Optional[str] = None
    loop_closure: Optional[int] = None
    skipped: bool = False

    def as_record(self):
        record = asdict(self)
        for key in ('sampling_ms', 'training_ms', 'registration_ms'):
            record[key] = round(record[key], 3)
        if record['rmse'] is not None:
            record['rmse'] = round(float(record['rmse']), 9)
        return record


@dataclass
class RunReport:
    source: str
    observations: list = field(default_factory=list)
    total_ms: float = 0.0
    degraded_fraction: float = 0.1

    @property
    def skipped(self):
        return sum(1 for o in self.observations if o.skipped)

    @property
    def degraded(self):
        return bool(self.observations) and self.skipped / len(self.observations) > self.degraded_fraction

    def stage_totals(self):
        return {stage: sum(getattr(o, f'{stage}_ms') for o in self.observations) for stage in STAGES}

    def as_record(self, include_timings=True):
        totals = self.stage_totals()
        record = {
            'source': self.source,
            'observations': len(self.observations),
            'skipped': self.skipped,
            'degraded': self.degraded,
            'spawn_reasons': [o.spawn_reason for o in self.observations if o.spawn_reason],
            'loop_closures': [[o.index, o.loop_closure] for o in self.observations if o.loop_closure is not None],
        }
        if include_timings:
            record['total_ms'] = round(self.total_ms, 3)
            record['stage_ms'] = {stage: round(value, 3) for stage, value in totals.items()}
            record['per_observation'] = [o.as_record() for o in self.observations]
        return record


@dataclass(eq=False)
class TrajectoryEstimate:
    """One entry per processed observation: frame id, frame-local pose and world pose."""
    timestamps: list = field(default_factory=list)
    frame_ids: list = field(default_factory=list)
    local_poses: list = field(default_factory=list)
    world_poses: list = field(default_factory=list)

    def __len__(self):
        return len(self.timestamps)

    def append(self, timestamp, frame_id, local_pose, world_pose):
        self.timestamps.append(timestamp)
        self.frame_ids.append(frame_id)
        self.local_poses.append(local_pose)
        self.world_poses.append(world_pose)

    def positions(self):
        if not self.world_poses:
            return np.zeros((0, 3))
        return np.array([pose.translation for pose in self.world_poses])

    def reconstructed(self, topo_map):
        """World poses recomputed from each frame's anchor and the frame-local poses."""
        return [topo_map.frame(i).anchor_pose @ local for i, local in zip(self.frame_ids, self.local_poses)]


@dataclass(eq=False)
class MappingResult:
    topo_map: TopologicalMap
    estimate: TrajectoryEstimate
    report: RunReport


class _Timer:
    def __init__(self):
        self.ms = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms += (time.perf_counter() - self._start) * 1000.0
        return False


class Mapper:
    """Incremental mapper; ``observe`` processes one RGB-D frame."""

    def __init__(self, intrinsics, config=None, source='stream'):
        self.intrinsics = intrinsics
        self.config = config or RunConfig()
        self.topo_map = TopologicalMap(self._new_field)
        self.estimate = TrajectoryEstimate()
        self.report = RunReport(source, degraded_fraction=self.config.run.degraded_fraction)
        self._recent = deque(maxlen=RECENT_BATCHES)
        self._buffer = None
        self._previous_world = []

    @property
    def seed(self):
        return self.config.run.seed

    def _new_field(self, previous=None):
        cfg = self.config
        if previous is not None:
            store = FeatureStore(cfg.map.voxel_size, cfg.network.feature_dim, cfg.map.neighbors)
            return NeuralField(previous.params.copy(), store)
        params = NetworkParams(cfg.network, seed=self.seed + len(self.topo_map.frames))
        store = FeatureStore(cfg.map.voxel_size, cfg.network.feature_dim, cfg.map.neighbors)
        return NeuralField(params, store)

    def _spawn(self, world_pose, index, reason=None):
        cfg = self.config
        previous = self.topo_map.active
        frame, _ = spawn_frame(
            self.topo_map, world_pose, index, reason, cfg.spawn,
            recent_batches=list(self._recent), training=cfg.training, seed=self.seed + index,
        )
        self._recent.clear()
        self._buffer = ReplayBuffer(cfg.replay.capacity, cfg.replay.min_per_frame, seed=self.seed + index)
        match = None
        if previous is not None:
            if cfg.run.label_traversability:
                try:
                    label_traversable(previous, cfg.traversability)
                except InsufficientDataError as exc:
                    logger.warning(f'Traversability skipped: {exc}')
            match = loop_check(previous, self.topo_map, cfg.loop, cfg.map.keypoint_radius)
        return frame, match

    def _guess(self, frame):
        """Constant-velocity guess in the frame's coordinates."""
        to_frame = frame.anchor_pose.inverse()
        history = [to_frame @ pose for pose in self._previous_world[-2:]]
        if len(history) == 2:
            return constant_velocity(history[1], history[0])
        return history[-1]

    def observe(self, rgbd, index=None):
        cfg = self.config
        index = len(self.estimate) if index is None else index
        record = ObservationRecord(index, float(rgbd.timestamp), -1)
        sampling, training, registration = _Timer(), _Timer(), _Timer()

        with sampling:
            cloud = backproject(rgbd, self.intrinsics, stride=cfg.sampler.dense_factor)
        record.points = len(cloud)

        if self.topo_map.active is None:
            frame, _ = self._spawn(Pose.identity(), index)
            local = Pose.identity()
        else:
            frame = self.topo_map.active
            local = self._guess(frame)
            with registration:
                try:
                    if len(cloud) == 0:
                        raise InsufficientOverlapError('Observation has no valid depth')
                    result = register(cloud, frame.field, local, cfg.registration, seed=self.seed + index)
                    local = result.pose
                    record.lm_iterations = result.iterations
                    record.rmse = result.final_rmse
                except (DivergenceError, InsufficientOverlapError, SingularSystemError) as exc:
                    record.skipped = True
                    logger.warning(f'Observation {index} skipped: {exc}')

            decision = should_spawn(frame, local, cfg.spawn)
            if decision and not record.skipped:
                world_pose = frame.world_pose(local)
                frame, match = self._spawn(world_pose, index, decision.reason)
                local = Pose.identity()
                record.spawn_reason = decision.reason.value
                record.loop_closure = match.frame_id if match is not None else None

        frame.append_pose(index, local)
        world_pose = frame.world_pose(local)
        self._previous_world.append(world_pose)
        self.estimate.append(record.timestamp, frame.id, local, world_pose)
        record.frame_id = frame.id

        if not record.skipped and len(cloud):
            with sampling:
                in_frame = transform_cloud(local, cloud)
                samples = sample_observation(in_frame, local.translation, cfg.sampler, self.seed + index, index)
                insert_keypoints(in_frame, frame.field.store, cfg.map.feature_init_scale, self.seed + index)
            due = index == frame.t_start or (index - frame.t_start) % cfg.training.cadence == 0
            if due and len(samples):
                with training:
                    self._train(frame, samples, index)
                record.trained = True
            self._buffer.add(samples)
            self._recent.append(samples)

        record.sampling_ms = sampling.ms
        record.training_ms = training.ms
        record.registration_ms = registration.ms
        self.report.observations.append(record)
        return record

    def _train(self, frame, samples, index):
        cfg = self.config
        neural = frame.field
        try:
            report = adaptive_train(samples, neural.store, neural.params, cfg.training, self._buffer, self.seed + index)
        except EmptyInputError as exc:
            logger.warning(f'Training skipped at observation {index}: {exc}')
            return
        logger.debug(
            f'Frame {frame.id} trained at observation {index}: {report.iterations} iterations, '
            f'bce {report.initial_bce:.4f} -> {report.final_bce:.4f}'
        )
        if cfg.run.consolidate_every_round and cfg.training.ewc_weight > 0:
            try:
                consolidate_ewc(neural.params, [samples], neural.store, cfg.training, self.seed + index)
            except EmptyInputError:
                pass

    def finish(self):
        """Refresh the active frame's keypoints and labels once the stream ends."""
        frame = self.topo_map.active
        if frame is not None and len(frame.field.store):
            frame.refresh_keypoints(seed=self.seed)
            if self.config.run.label_traversability:
                try:
                    label_traversable(frame, self.config.traversability)
                except InsufficientDataError as exc:
                    logger.warning(f'Traversability skipped: {exc}')
        return MappingResult(self.topo_map, self.estimate, self.report)


def run_mapping(sequence, config=None, source=None, num_threads=None):
    """
    Map a whole sequence (anything with ``frames()`` and ``intrinsics``).
    Returns the topological map, the trajectory estimate and the run report.
    """
    config = config or RunConfig()
    torch.set_num_threads(num_threads or settings.IMPLICITNAV_NUM_THREADS)
    limit = config.run.max_frames or None
    mapper = Mapper(sequence.intrinsics, config, source or getattr(sequence, 'name', 'sequence'))
    started = time.perf_counter()
    count = 0
    for count, rgbd in enumerate(sequence.frames(), start=1):
        mapper.observe(rgbd, count - 1)
        if limit and count >= limit:
            break
    if count < 2:
        raise InsufficientDataError(f'Mapping needs at least 2 observations, got {count}')
    result = mapper.finish()
    result.report.total_ms = (time.perf_counter() - started) * 1000.0

    report = result.report
    totals = report.stage_totals()
    logger.info(
        f'Mapped {len(report.observations)} observations into {len(result.topo_map)} frames '
        f'({report.skipped} skipped) in {report.total_ms / 1000.0:.1f} s; '
        + ', '.join(f'{stage} {ms / 1000.0:.1f} s' for stage, ms in totals.items())
    )
    if report.degraded:
        logger.warning(f'Run degraded: {report.skipped} of {len(report.observations)} observations skipped')
    return result
