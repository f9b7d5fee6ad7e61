"""
Planning across local frames.

The route through the topological map fixes the order of frames; each segment
plans on the horizontal plane of the start frame towards the next frame's
anchor, and the final segment runs to the goal. Clearance queries go to every
frame on the route through a composite field world.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from core.exceptions import OutOfMapError, SegmentPlanningError
from core.geometry import Pose
from frames.graph import Route, topo_route

from .rrt import PlannerConfig, PlanResult, densify, path_length, plan, shortcut
from .worlds import FieldMember, FieldWorld, PlanePatch, WorldMode

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class TopoPlanResult(PlanResult):
    route: Optional[Route] = None
    plane: Optional[PlanePatch] = None
    reference: Pose = field(default_factory=Pose.identity)
    segments: list = field(default_factory=list)

    def world_waypoints(self):
        """Waypoints lifted off the planning plane into world coordinates."""
        return self.reference.apply(self.plane.to_3d(self.path))


def locate(topo_map, point):
    """Id of the frame that knows the world ``point``, preferring the closest anchor."""
    point = np.asarray(point, dtype=np.float64).reshape(1, 3)
    best, best_distance = None, np.inf
    for frame in topo_map.frames.values():
        answer = frame.field.query(frame.anchor_pose.inverse().apply(point))
        if not answer.valid[0]:
            continue
        distance = float(np.linalg.norm(frame.anchor_pose.translation - point[0]))
        if distance < best_distance:
            best, best_distance = frame.id, distance
    if best is None:
        raise OutOfMapError(f'No frame knows the point {point[0].tolist()}')
    return best


def route_anchors(route):
    """Anchor of every route frame in the first frame's coordinates."""
    poses = [Pose.identity()]
    for step in route.relative_poses:
        poses.append(poses[-1] @ step)
    return poses


def plan_with_topo(start, goal_world, topo_map, cfg=None, rng_seed=0, start_frame=None, goal_frame=None,
                   plane=None, margin=2.0, mode=WorldMode.STRICT):
    """
    Plan from the world point ``start`` to ``goal_world`` through the frames of
    the topological route. The plane defaults to the start frame's x/z plane
    through the start. Raises SegmentPlanningError naming the failed segment.
    """
    cfg = cfg or PlannerConfig()
    start = np.asarray(start, dtype=np.float64)
    goal_world = np.asarray(goal_world, dtype=np.float64)
    start_frame = locate(topo_map, start) if start_frame is None else start_frame
    goal_frame = locate(topo_map, goal_world) if goal_frame is None else goal_frame
    route = topo_route(topo_map, start_frame, goal_frame)

    reference = topo_map.frame(start_frame).anchor_pose
    to_reference = reference.inverse()
    plane = plane or PlanePatch(to_reference.apply(start[None, :])[0])
    anchors = route_anchors(route)
    members = [
        FieldMember(topo_map.frame(frame_id).field, anchor.inverse())
        for frame_id, anchor in zip(route.frame_ids, anchors)
    ]

    waypoints = [plane.to_2d(to_reference.apply(start[None, :]))[0]]
    waypoints += [plane.to_2d(anchor.translation[None, :])[0] for anchor in anchors[1:]]
    waypoints.append(plane.to_2d(to_reference.apply(goal_world[None, :]))[0])
    corners = np.array(waypoints)
    world = FieldWorld(members, (corners.min(axis=0) - margin, corners.max(axis=0) + margin), plane, mode, 'route')
    logger.info(f'Planning through frames {route.frame_ids}')

    segments = []
    for i, (a, b) in enumerate(zip(waypoints[:-1], waypoints[1:])):
        result = plan(a, b, world, cfg, rng_seed + i)
        segments.append(result)
        if not result.success:
            raise SegmentPlanningError(
                f'Segment {i} ({route.frame_ids[min(i, len(route) - 1)]}) failed: {result.failure}',
                segment_index=i, result=result,
            )

    if len(segments) == 1:
        path = segments[0].path
    else:
        path = np.concatenate([segments[0].path] + [s.path[1:] for s in segments[1:]])
        path = densify(shortcut(path, world, cfg.clearance), cfg.step_size)
    return TopoPlanResult(
        path, path_length(path),
        sum(s.iterations for s in segments), sum(s.tree_size for s in segments),
        sum(s.runtime_ms for s in segments), True,
        route=route, plane=plane, reference=reference, segments=segments,
    )
