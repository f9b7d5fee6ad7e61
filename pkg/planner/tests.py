import math
import tempfile
from pathlib import Path

import numpy as np
import yaml
from django.test import SimpleTestCase
from scipy.stats import chisquare

from core.exceptions import ConfigError, InvalidStartError, NoRouteError, SegmentPlanningError
from core.geometry import Pose
from core.shapes import Box, Room, Scene, Sphere
from frames.graph import LocalFrame, TopoEdge, TopologicalMap

from .rrt import (
    PlannerConfig,
    Tree,
    baseline_plan,
    collision_free,
    densify,
    path_length,
    plan,
    ray_offsets,
    sample_goal_biased,
    segments_free,
)
from .topo import locate, plan_with_topo
from .worlds import AnalyticWorld, FieldMember, FieldWorld, PlanePatch, WorldMode, load_world


def corridor():
    return AnalyticWorld(
        'corridor', ([0.0, 0.0], [10.0, 3.0]),
        [Sphere([3.0, 1.0], 0.4), Sphere([5.0, 2.0], 0.4), Sphere([7.0, 1.0], 0.4)],
        start=[0.5, 1.5], goal=[9.5, 1.5],
    )


def empty_world():
    return AnalyticWorld('empty', ([-1.0, -1.0], [7.0, 3.0]), start=[0.0, 1.0], goal=[5.0, 1.0])


def min_clearance(path, world, spacing):
    points = []
    for a, b in zip(path[:-1], path[1:]):
        n = max(int(math.ceil(np.linalg.norm(b - a) / spacing)), 1)
        points.append(a + np.linspace(0.0, 1.0, n + 1)[:, None] * (b - a))
    distance, _ = world.clearance(np.concatenate(points))
    return float(distance.min())


def two_rooms_scene(anchor, z_range):
    """Two rooms joined by a door at |x| < 0.6 in the wall z = 2, seen from ``anchor``."""
    shift = np.asarray(anchor, dtype=np.float64)
    shapes = [
        Room(np.array([0.0, 0.0, 2.0]) - shift, [2.0, 1.5, 4.0]),
        Box(np.array([-1.4, 0.0, 2.0]) - shift, [0.8, 1.5, 0.1]),
        Box(np.array([1.4, 0.0, 2.0]) - shift, [0.8, 1.5, 0.1]),
    ]
    low = np.array([-3.0, -2.0, z_range[0]]) - shift
    high = np.array([3.0, 2.0, z_range[1]]) - shift
    return Scene(shapes, (low, high))


def two_room_map(connected=True):
    topo = TopologicalMap()
    anchors = [np.zeros(3), np.array([0.0, 0.0, 4.0])]
    for i, (anchor, z_range) in enumerate(zip(anchors, [(-2.5, 3.0), (1.0, 6.5)])):
        topo.add_frame(LocalFrame(i, Pose(np.eye(3), anchor), i * 10, two_rooms_scene(anchor, z_range)))
    if connected:
        topo.add_edge(TopoEdge(0, 1, Pose(np.eye(3), anchors[1]), (0, 9)))
    return topo


class CollisionFreeTest(SimpleTestCase):
    def setUp(self):
        self.world = AnalyticWorld('disc', ([-3.0, -3.0], [3.0, 3.0]), [Sphere([0.0, 0.0], 0.5)])

    def test_point_segment_in_free_space(self):
        self.assertTrue(collision_free(np.array([2.0, 2.0]), np.array([2.0, 2.0]), self.world, 0.25))

    def test_through_obstacle_center(self):
        self.assertFalse(collision_free(np.array([-2.0, 0.0]), np.array([2.0, 0.0]), self.world, 0.25))

    def test_tangent_at_clearance(self):
        y = 0.5 + 0.25 + 1e-6
        self.assertTrue(collision_free(np.array([-2.0, y]), np.array([2.0, y]), self.world, 0.25))

    def test_inflated_obstacle_blocks(self):
        y = 0.5 + 0.2
        self.assertFalse(collision_free(np.array([-2.0, y]), np.array([2.0, y]), self.world, 0.25))

    def test_leaving_bounds_blocks(self):
        self.assertFalse(collision_free(np.array([2.0, 2.0]), np.array([4.0, 2.0]), self.world, 0.25))

    def test_vectorized_matches_single(self):
        starts = np.array([[-2.0, 0.0], [2.0, 2.0], [-2.0, 0.8]])
        ends = np.array([[2.0, 0.0], [2.0, -2.0], [2.0, 0.8]])
        expected = [collision_free(a, b, self.world, 0.25) for a, b in zip(starts, ends)]
        self.assertEqual(segments_free(starts, ends, self.world, 0.25).tolist(), expected)

    def test_unknown_space_depends_on_mode(self):
        scene = Scene([], ([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]))
        plane = PlanePatch(np.zeros(3))
        a, b = np.array([0.0, 0.0]), np.array([2.0, 0.0])
        strict = FieldWorld.single(scene, ([-3.0, -3.0], [3.0, 3.0]), plane, WorldMode.STRICT)
        explore = FieldWorld.single(scene, ([-3.0, -3.0], [3.0, 3.0]), plane, WorldMode.EXPLORE)
        self.assertFalse(collision_free(a, b, strict, 0.25))
        self.assertTrue(collision_free(a, b, explore, 0.25))


class SampleGoalBiasedTest(SimpleTestCase):
    current = np.array([0.0, 0.0])
    goal = np.array([4.0, 3.0])

    def draw(self, cfg, n, seed=0, world=None):
        rng = np.random.default_rng(seed)
        ray_index = 0
        samples = []
        for _ in range(n):
            point, ray_index = sample_goal_biased(self.current, self.goal, cfg, rng, ray_index, world)
            samples.append(point)
        return np.array(samples)

    def test_single_ray_stays_on_segment(self):
        samples = self.draw(PlannerConfig(n_alt_rays=0, goal_bias=1.0, uniform_fallback=0.0), 500)
        direction = self.goal / np.linalg.norm(self.goal)
        offsets = samples - np.outer(samples @ direction, direction)
        self.assertLess(np.abs(offsets).max(), 1e-9)
        along = samples @ direction
        self.assertTrue(np.all((along >= 0.0) & (along <= 5.0)))

    def test_angles_follow_the_ray_fan(self):
        cfg = PlannerConfig(goal_bias=1.0, uniform_fallback=0.0)
        samples = self.draw(cfg, 1000)
        goal_angle = math.atan2(self.goal[1], self.goal[0])
        angles = np.arctan2(samples[:, 1], samples[:, 0]) - goal_angle
        expected = np.array(ray_offsets(cfg.n_alt_rays) * 200)[:1000] * cfg.alpha
        np.testing.assert_allclose(angles, expected, atol=1e-9)

    def test_round_robin_starts_with_goal_vector(self):
        self.assertEqual(ray_offsets(2), [0, 1, -1, 2, -2])

    def test_uniform_fallback_is_uniform(self):
        world = AnalyticWorld('box', ([0.0, 0.0], [10.0, 10.0]))
        samples = self.draw(PlannerConfig(goal_bias=0.0, uniform_fallback=1.0), 5000, world=world)
        counts, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=10, range=[[0, 10], [0, 10]])
        # 50 expected per bin
        self.assertLess(np.abs(counts - 50.0).max(), 5 * np.sqrt(50.0 * 0.99))
        self.assertGreater(chisquare(counts.ravel()).pvalue, 1e-4)

    def test_informed_samples_stay_in_ellipse(self):
        cfg = PlannerConfig(goal_bias=0.0, uniform_fallback=0.0, informed_ratio=1.5)
        samples = self.draw(cfg, 1000)
        focal = np.linalg.norm(samples - self.current, axis=1) + np.linalg.norm(samples - self.goal, axis=1)
        self.assertLessEqual(focal.max(), 1.5 * 5.0 + 1e-9)

    def test_rotation_about_vertical_in_3d(self):
        cfg = PlannerConfig(n_alt_rays=1, goal_bias=1.0, uniform_fallback=0.0)
        rng = np.random.default_rng(0)
        current, goal = np.zeros(3), np.array([2.0, 0.0, 0.0])
        _, index = sample_goal_biased(current, goal, cfg, rng, 0)
        point, _ = sample_goal_biased(current, goal, cfg, rng, index)
        self.assertAlmostEqual(point[2], 0.0, places=12)
        self.assertAlmostEqual(math.atan2(point[1], point[0]), cfg.alpha, places=9)

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            PlannerConfig(goal_bias=0.8, uniform_fallback=0.3)
        with self.assertRaises(ConfigError):
            PlannerConfig(step_size=0.0)


class TreeTest(SimpleTestCase):
    def test_rewiring_lowers_subtree_costs(self):
        tree = Tree(np.zeros(2), 10)
        a = tree.add(np.array([1.0, 1.0]), 0, math.sqrt(2.0))
        b = tree.add(np.array([2.0, 0.0]), a, 2 * math.sqrt(2.0))
        c = tree.add(np.array([3.0, 0.0]), b, 2 * math.sqrt(2.0) + 1.0)
        before = tree.costs[:tree.size].copy()
        tree.reparent(b, 0, 2.0)
        self.assertEqual(tree.parents[b], 0)
        self.assertAlmostEqual(tree.costs[c], 3.0)
        self.assertTrue(np.all(tree.costs[:tree.size] <= before + 1e-12))
        self.assertNotIn(b, tree.children[a])

    def test_branch_runs_root_to_node(self):
        tree = Tree(np.zeros(2), 4)
        a = tree.add(np.array([1.0, 0.0]), 0, 1.0)
        b = tree.add(np.array([2.0, 0.0]), a, 2.0)
        np.testing.assert_array_equal(tree.branch(b), [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])


class PlanTest(SimpleTestCase):
    def test_empty_world_nearly_straight(self):
        world = empty_world()
        result = plan(world.start, world.goal, world, PlannerConfig(), rng_seed=0)
        self.assertTrue(result.success)
        self.assertLessEqual(result.length, 5.0 * 1.05)
        np.testing.assert_array_equal(result.path[0], world.start)
        np.testing.assert_array_equal(result.path[-1], world.goal)

    def test_waypoint_gaps_and_length(self):
        world = corridor()
        cfg = PlannerConfig()
        result = plan(world.start, world.goal, world, cfg, rng_seed=3)
        self.assertTrue(result.success)
        gaps = np.linalg.norm(np.diff(result.path, axis=0), axis=1)
        self.assertLessEqual(gaps.max(), cfg.step_size * 1.5)
        self.assertAlmostEqual(result.length, float(gaps.sum()), places=9)

    def test_path_keeps_clearance(self):
        world = corridor()
        cfg = PlannerConfig()
        for seed in range(5):
            result = plan(world.start, world.goal, world, cfg, rng_seed=seed)
            self.assertTrue(result.success)
            # convex obstacles dip at most a few percent below delta between delta/2 samples
            self.assertGreaterEqual(min_clearance(result.path, world, cfg.clearance / 4), 0.95 * cfg.clearance)

    def test_goal_inside_obstacle_fails(self):
        world = corridor()
        result = plan(world.start, np.array([3.0, 1.0]), world)
        self.assertFalse(result.success)
        self.assertEqual(result.iterations, 0)

    def test_start_in_collision(self):
        world = corridor()
        with self.assertRaises(InvalidStartError):
            plan(np.array([5.0, 2.0]), world.goal, world)

    def test_budget_exhausted(self):
        world = corridor()
        result = plan(world.start, world.goal, world, PlannerConfig(max_iterations=3))
        self.assertFalse(result.success)
        self.assertEqual(result.iterations, 3)

    def test_deterministic(self):
        world = corridor()
        first = plan(world.start, world.goal, world, rng_seed=11)
        second = plan(world.start, world.goal, world, rng_seed=11)
        np.testing.assert_array_equal(first.path, second.path)
        self.assertEqual(first.tree_size, second.tree_size)

    def test_three_dimensional(self):
        world = AnalyticWorld('cube', ([0.0, 0.0, 0.0], [4.0, 4.0, 4.0]), [Box([2.0, 2.0, 2.0], [0.5, 0.5, 0.5])])
        result = plan(np.array([0.5, 0.5, 0.5]), np.array([3.5, 3.5, 3.5]), world)
        self.assertTrue(result.success)
        self.assertEqual(result.path.shape[1], 3)

    def test_tree_is_rooted_at_start(self):
        world = corridor()
        result = plan(world.start, world.goal, world, rng_seed=2)
        nodes, parents = result.tree_nodes, result.tree_parents
        self.assertEqual(parents[0], -1)
        self.assertTrue(np.all(parents[1:] < len(nodes)))


class BaselinePlanTest(SimpleTestCase):
    def test_empty_world_success(self):
        world = empty_world()
        result = baseline_plan(world.start, world.goal, world)
        self.assertTrue(result.success)
        self.assertLessEqual(result.length, 5.0 * 1.05)

    def test_path_is_smoothed_like_plan(self):
        world = corridor()
        cfg = PlannerConfig()
        for planner in (plan, baseline_plan):
            result = planner(world.start, world.goal, world, cfg, rng_seed=4)
            self.assertTrue(result.success)
            gaps = np.linalg.norm(np.diff(result.path, axis=0), axis=1)
            self.assertLessEqual(gaps.max(), cfg.step_size * 1.5)
            self.assertLessEqual(result.length, result.tree_length + 1e-9)
            self.assertEqual(result.as_record()['tree_length'], round(result.tree_length, 9))

    def test_deterministic(self):
        world = corridor()
        first = baseline_plan(world.start, world.goal, world, rng_seed=4)
        second = baseline_plan(world.start, world.goal, world, rng_seed=4)
        np.testing.assert_array_equal(first.path, second.path)

    def test_goal_bias_needs_fewer_iterations_without_obstacles(self):
        world = corridor().without_obstacles()
        for seed in range(5):
            ours = plan(world.start, world.goal, world, rng_seed=seed)
            theirs = baseline_plan(world.start, world.goal, world, rng_seed=seed)
            self.assertTrue(ours.success and theirs.success)
            self.assertLessEqual(ours.iterations, theirs.iterations)


class PathHelpersTest(SimpleTestCase):
    def test_densify_respects_step(self):
        path = densify(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.65]]), 0.3)
        gaps = np.linalg.norm(np.diff(path, axis=0), axis=1)
        self.assertLessEqual(gaps.max(), 0.3 + 1e-12)
        self.assertAlmostEqual(path_length(path), 1.65)


class WorldFileTest(SimpleTestCase):
    def test_round_trip(self):
        world = corridor()
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'corridor.yaml'
            path.write_text(yaml.safe_dump(world.as_record()))
            loaded = load_world(path)
        self.assertEqual(loaded.as_record(), world.as_record())

    def test_shipped_worlds_load(self):
        for name in ('corridor', 'empty'):
            world = load_world(name)
            self.assertIsNotNone(world.start)
            self.assertIsNotNone(world.goal)

    def test_unknown_obstacle(self):
        with self.assertRaises(ConfigError):
            AnalyticWorld.from_record({'bounds': [[0, 0], [1, 1]], 'obstacles': [{'type': 'cone'}]})

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            AnalyticWorld.from_record({'bounds': [[0, 0], [1, 1]], 'height': 2})


class PlanWithTopoTest(SimpleTestCase):
    start = np.array([-1.2, 0.0, -1.0])

    def test_locate(self):
        topo = two_room_map()
        self.assertEqual(locate(topo, self.start), 0)
        self.assertEqual(locate(topo, np.array([0.0, 0.0, 5.0])), 1)

    def test_same_frame_matches_plan(self):
        topo = two_room_map()
        goal = np.array([1.0, 0.0, 0.5])
        cfg = PlannerConfig()
        result = plan_with_topo(self.start, goal, topo, cfg, rng_seed=5)
        self.assertEqual(result.route.frame_ids, [0])

        plane = PlanePatch(self.start)
        a, b = plane.to_2d(self.start)[0], plane.to_2d(goal)[0]
        corners = np.array([a, b])
        world = FieldWorld([FieldMember(topo.frame(0).field)], (corners.min(axis=0) - 2.0, corners.max(axis=0) + 2.0),
                           plane)
        direct = plan(a, b, world, cfg, rng_seed=5)
        np.testing.assert_array_equal(result.path, direct.path)

    def test_crosses_into_second_frame_through_door(self):
        topo = two_room_map()
        goal = np.array([1.2, 0.0, 5.0])
        result = plan_with_topo(self.start, goal, topo, PlannerConfig(), rng_seed=0)
        self.assertTrue(result.success)
        self.assertEqual(result.route.frame_ids, [0, 1])

        waypoints = result.world_waypoints()
        np.testing.assert_allclose(waypoints[0], self.start, atol=1e-9)
        np.testing.assert_allclose(waypoints[-1], goal, atol=1e-9)
        self.assertTrue(np.any(waypoints[:, 2] < 1.0))
        self.assertTrue(np.any(waypoints[:, 2] > 3.0))
        at_wall = np.abs(waypoints[:, 2] - 2.0) < 0.1
        self.assertTrue(np.all(np.abs(waypoints[at_wall, 0]) < 0.6))

    def test_disconnected_graph(self):
        topo = two_room_map(connected=False)
        with self.assertRaises(NoRouteError):
            plan_with_topo(self.start, np.array([0.0, 0.0, 5.0]), topo)

    def test_segment_failure_names_segment(self):
        topo = two_room_map()
        goal = np.array([1.2, 0.0, 5.0])
        with self.assertRaises(SegmentPlanningError) as ctx:
            plan_with_topo(self.start, goal, topo, PlannerConfig(max_iterations=2), rng_seed=0)
        self.assertEqual(ctx.exception.segment_index, 0)
        self.assertFalse(ctx.exception.result.success)
