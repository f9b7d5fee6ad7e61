import math
import tempfile
from pathlib import Path

import numpy as np
import torch
import yaml
from django.test import SimpleTestCase

from core.exceptions import InsufficientDataError, NoRouteError, UndefinedSimilarityError
from core.geometry import Pose, exp_map
from field.features import FeatureStore, SemanticLabel
from field.implicit import NeuralField
from field.network import Architecture, NetworkParams

from .export import export_map, map_record
from .graph import (
    EdgeKind,
    Keypoints,
    LocalFrame,
    SpawnPolicy,
    SpawnReason,
    TopoEdge,
    TopologicalMap,
    farthest_point_indices,
    should_spawn,
    spawn_frame,
    topo_route,
)
from .similarity import LoopConfig, loop_check, similarity, symmetric_similarity
from .traversability import TraversabilityConfig, label_traversable


def translation(x, y=0.0, z=0.0):
    return Pose(np.eye(3), [x, y, z])


def yaw(degrees):
    return exp_map(np.array([0.0, math.radians(degrees), 0.0, 0.0, 0.0, 0.0]))


def frame_with_points(positions, frame_id=0, anchor=None, features=None, seed=0):
    positions = np.asarray(positions, dtype=np.float64)
    store = FeatureStore(voxel_size=0.1, feature_dim=4)
    if features is None:
        features = np.random.default_rng(seed).normal(size=(positions.shape[0], 4))
    store.insert(positions, features)
    field = NeuralField(NetworkParams(Architecture(feature_dim=4)), store)
    return LocalFrame(frame_id, anchor or Pose.identity(), 0, field)


def grid(nx_, nz, spacing=0.1, y=0.0, origin=(0.0, 0.0)):
    # cell centers, so no two points share a voxel
    xs, zs = np.meshgrid(
        (np.arange(nx_) + 0.5) * spacing + origin[0], (np.arange(nz) + 0.5) * spacing + origin[1], indexing='ij',
    )
    return np.stack([xs.ravel(), np.full(xs.size, y), zs.ravel()], axis=1)


class ShouldSpawnTest(SimpleTestCase):
    def setUp(self):
        self.frame = LocalFrame(0, Pose.identity(), 0, NeuralField())
        self.frame.append_pose(0, Pose.identity())

    def test_first_pose_at_anchor_does_not_spawn(self):
        self.assertFalse(should_spawn(self.frame, Pose.identity(), SpawnPolicy()))

    def test_frame_count_trigger(self):
        for i in range(1, 120):
            self.frame.append_pose(i, Pose.identity())
        decision = should_spawn(self.frame, Pose.identity(), SpawnPolicy(max_frames=120))
        self.assertTrue(decision)
        self.assertEqual(decision.reason, SpawnReason.FRAME_COUNT)

    def test_viewpoint_trigger(self):
        decision = should_spawn(self.frame, yaw(35.0), SpawnPolicy())
        self.assertEqual(decision.reason, SpawnReason.VIEWPOINT)
        self.assertFalse(should_spawn(self.frame, yaw(25.0), SpawnPolicy()))

    def test_translation_trigger_uses_path_length(self):
        for i, x in enumerate([1.0, 2.0, 1.0], start=1):
            self.frame.append_pose(i, translation(x))
        decision = should_spawn(self.frame, translation(0.5), SpawnPolicy(max_translation=3.0))
        self.assertEqual(decision.reason, SpawnReason.TRANSLATION)

    def test_exactly_one_reason(self):
        for i in range(1, 5):
            self.frame.append_pose(i, Pose.identity())
        pose = Pose(yaw(40.0).rotation, [5.0, 0.0, 0.0])
        decision = should_spawn(self.frame, pose, SpawnPolicy(max_frames=5))
        self.assertEqual(decision.reason, SpawnReason.TRANSLATION)

    def test_trajectory_length_matches_span(self):
        self.frame.append_pose(1, Pose.identity())
        self.assertEqual(len(self.frame.trajectory), self.frame.t_end - self.frame.t_start + 1)
        with self.assertRaises(ValueError):
            self.frame.append_pose(5, Pose.identity())


class SpawnFrameTest(SimpleTestCase):
    def test_first_frame_has_no_edge(self):
        topo = TopologicalMap()
        frame, edge = spawn_frame(topo, Pose.identity(), 0)
        self.assertIsNone(edge)
        self.assertEqual((len(topo), len(topo.edges)), (1, 0))
        self.assertIs(topo.active, frame)

    def test_chain_of_spawns(self):
        topo = TopologicalMap()
        rng = np.random.default_rng(0)
        anchors = [Pose.identity()]
        for _ in range(4):
            anchors.append(anchors[-1] @ exp_map(rng.normal(scale=0.3, size=6)))
        for i, anchor in enumerate(anchors):
            spawn_frame(topo, anchor, i * 10, SpawnReason.FRAME_COUNT if i else None)
        self.assertEqual(len(topo), 5)
        self.assertEqual(len(topo.edges), 4)
        self.assertTrue(topo.is_connected())
        composed = Pose.identity()
        for edge in topo.edges:
            composed = composed @ edge.relative_pose
        np.testing.assert_allclose(composed.as_matrix(), anchors[-1].as_matrix(), atol=1e-6)

    def test_previous_field_is_frozen_and_new_field_fresh(self):
        topo = TopologicalMap()
        first, _ = spawn_frame(topo, Pose.identity(), 0)
        second, edge = spawn_frame(topo, translation(1.0), 5, SpawnReason.TRANSLATION)
        self.assertTrue(first.field.frozen)
        self.assertFalse(second.field.frozen)
        self.assertIsNot(first.field, second.field)
        self.assertEqual(edge.observation_span, (first.t_end, 5))

    def test_warm_start_copies_weights(self):
        topo = TopologicalMap(new_field=lambda previous: previous.copy() if previous else NeuralField())
        first, _ = spawn_frame(topo, Pose.identity(), 0)
        second, _ = spawn_frame(topo, translation(1.0), 5, policy=SpawnPolicy(warm_start=True))
        self.assertTrue(torch.equal(first.field.params.flat(), second.field.params.flat()))

    def test_edge_needs_two_frames(self):
        with self.assertRaises(ValueError):
            TopoEdge(1, 1, Pose.identity(), (0, 0))


class SimilarityTest(SimpleTestCase):
    def keypoints(self, positions, features, anchor=None):
        return Keypoints(np.asarray(positions, dtype=float), np.asarray(features, dtype=float), anchor or Pose.identity())

    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(0)
        points = rng.random((50, 3)) * 3
        a = self.keypoints(points, rng.normal(size=(50, 4)))
        self.assertEqual(similarity(a, a, 0.1), 1.0)
        self.assertEqual(symmetric_similarity(a, a, 0.1), 1.0)

    def test_disjoint_sets_score_zero(self):
        features = np.ones((10, 4))
        a = self.keypoints(grid(5, 2), features)
        b = self.keypoints(grid(5, 2) + [5.0, 0.0, 0.0], features)
        self.assertEqual(similarity(a, b, 0.1), 0.0)

    def test_half_overlap(self):
        points = grid(10, 10)
        features = np.ones((100, 4))
        a = self.keypoints(points, features)
        b = self.keypoints(points[points[:, 0] < 0.5], features[:50])
        self.assertTrue(0.4 <= similarity(a, b, 0.05) <= 0.6)

    def test_anchors_are_aligned(self):
        rng = np.random.default_rng(1)
        points = rng.random((40, 3))
        features = rng.normal(size=(40, 4))
        anchor = Pose(yaw(30.0).rotation, [1.0, 0.0, 2.0])
        moved = anchor.inverse().apply(points)
        a = self.keypoints(points, features)
        b = self.keypoints(moved, features, anchor)
        self.assertAlmostEqual(similarity(a, b, 1e-6), 1.0)

    def test_feature_mismatch(self):
        points = grid(4, 4)
        a = self.keypoints(points, np.tile([1.0, 0.0, 0.0, 0.0], (16, 1)))
        b = self.keypoints(points, np.tile([0.0, 1.0, 0.0, 0.0], (16, 1)))
        self.assertEqual(similarity(a, b, 0.1), 0.0)

    def test_empty_keypoints(self):
        a = self.keypoints(grid(2, 2), np.ones((4, 4)))
        empty = self.keypoints(np.zeros((0, 3)), np.zeros((0, 4)))
        with self.assertRaises(UndefinedSimilarityError):
            similarity(a, empty, 0.1)


class LoopCheckTest(SimpleTestCase):
    def build_loop(self):
        """Frames 0-1-2 in a chain; frame 2 sees frame 0's geometry again."""
        rng = np.random.default_rng(2)
        points = rng.random((300, 3)) * 2.0
        features = rng.normal(size=(300, 4))
        topo = TopologicalMap()
        anchors = [Pose.identity(), translation(3.0), translation(0.5, 0.0, 0.5)]
        for i, anchor in enumerate(anchors):
            if i == 1:
                local = points + [10.0, 0.0, 0.0]
            else:
                local = anchor.inverse().apply(points)
            frame = frame_with_points(local, i, anchor, features)
            frame.refresh_keypoints()
            topo.add_frame(frame)
            if i:
                topo.add_edge(TopoEdge(i - 1, i, anchors[i - 1].inverse() @ anchor, (i, i)))
        topo.active_id = 2
        return topo

    def test_empty_map(self):
        topo = TopologicalMap()
        frame = frame_with_points(grid(3, 3))
        topo.add_frame(frame)
        self.assertIsNone(loop_check(frame, topo, LoopConfig(), 0.1))

    def test_revisit_matches_first_frame(self):
        topo = self.build_loop()
        match = loop_check(topo.frame(2), topo, LoopConfig(), 0.1)
        self.assertEqual(match.frame_id, 0)
        self.assertEqual(len(topo), 3)
        self.assertEqual(topo.edges[-1].kind, EdgeKind.LOOP)
        self.assertEqual((topo.edges[-1].from_id, topo.edges[-1].to_id), (2, 0))

    def test_unreachable_threshold(self):
        topo = self.build_loop()
        self.assertIsNone(loop_check(topo.frame(2), topo, LoopConfig(threshold=1.01), 0.1))
        self.assertEqual(len(topo.edges), 2)


class TopoRouteTest(SimpleTestCase):
    def square(self, with_closure=True):
        topo = TopologicalMap()
        anchors = [translation(0.0), translation(2.0), translation(2.0, 0.0, 2.0), translation(0.0, 0.0, 2.0)]
        for i, anchor in enumerate(anchors):
            spawn_frame(topo, anchor, i)
        if with_closure:
            topo.add_edge(TopoEdge(3, 0, anchors[3].inverse() @ anchors[0], (3, 3), EdgeKind.LOOP))
        return topo, anchors

    def test_same_frame(self):
        topo, _ = self.square()
        self.assertEqual(topo_route(topo, 2, 2).frame_ids, [2])

    def test_chain(self):
        topo, _ = self.square(with_closure=False)
        self.assertEqual(len(topo_route(topo, 0, 2)), 3)

    def test_route_uses_closure_edge(self):
        topo, anchors = self.square()
        route = topo_route(topo, 0, 3)
        self.assertEqual(route.frame_ids, [0, 3])
        expected = anchors[0].inverse() @ anchors[3]
        np.testing.assert_allclose(route.composed().as_matrix(), expected.as_matrix(), atol=1e-6)

    def test_route_composition_matches_anchors(self):
        topo, anchors = self.square(with_closure=False)
        route = topo_route(topo, 3, 0)
        expected = anchors[3].inverse() @ anchors[0]
        np.testing.assert_allclose(route.composed().as_matrix(), expected.as_matrix(), atol=1e-6)

    def test_disconnected(self):
        topo, _ = self.square()
        topo.add_frame(LocalFrame(9, Pose.identity(), 50, NeuralField()))
        with self.assertRaises(NoRouteError):
            topo_route(topo, 0, 9)


class TraversabilityTest(SimpleTestCase):
    def test_flat_floor(self):
        frame = frame_with_points(grid(20, 20, y=1.0))
        result = label_traversable(frame)
        self.assertEqual(result.traversable_fraction, 1.0)
        self.assertTrue(np.all(frame.field.store.labels == SemanticLabel.TRAVERSABLE))

    def test_box_on_floor(self):
        floor = grid(30, 30, y=1.0)
        box = grid(5, 5, y=0.5, origin=(1.0, 1.0))
        sides = np.array([[1.0, y, 1.0 + 0.1 * k] for y in (0.6, 0.7, 0.8, 0.9) for k in range(5)])
        frame = frame_with_points(np.concatenate([floor, box, sides]))
        result = label_traversable(frame)
        labels = frame.field.store.labels
        heights = frame.field.store.positions[:, 1]
        self.assertTrue(np.all(labels[heights < 0.95] == SemanticLabel.OBSTACLE))
        self.assertTrue(np.all(labels[heights == 1.0] == SemanticLabel.TRAVERSABLE))
        self.assertIsNone(result.warning)

    def test_wall_only_warns(self):
        ys, zs = np.meshgrid(np.arange(20) * 0.1, np.arange(20) * 0.1, indexing='ij')
        wall = np.stack([np.zeros(ys.size), ys.ravel(), zs.ravel()], axis=1)
        frame = frame_with_points(wall)
        with self.assertLogs('frames.traversability', level='WARNING'):
            result = label_traversable(frame)
        self.assertIsNone(result.plane)
        self.assertTrue(np.all(result.labels == SemanticLabel.OBSTACLE))

    def test_too_few_points(self):
        with self.assertRaises(InsufficientDataError):
            label_traversable(frame_with_points(grid(5, 5)))

    def test_seeded(self):
        first = label_traversable(frame_with_points(grid(20, 20, y=1.0)), TraversabilityConfig(seed=3))
        second = label_traversable(frame_with_points(grid(20, 20, y=1.0)), TraversabilityConfig(seed=3))
        np.testing.assert_array_equal(first.plane.normal, second.plane.normal)


class FarthestPointTest(SimpleTestCase):
    def test_returns_all_points_when_few(self):
        self.assertEqual(list(farthest_point_indices(np.zeros((3, 3)), 5)), [0, 1, 2])

    def test_spreads_samples(self):
        points = np.concatenate([np.zeros((100, 3)), [[10.0, 0.0, 0.0]]])
        chosen = farthest_point_indices(points, 2, seed=0)
        self.assertIn(100, chosen)


class ExportTest(SimpleTestCase):
    def test_node_count_matches_map(self):
        topo = TopologicalMap()
        spawn_frame(topo, Pose.identity(), 0)
        spawn_frame(topo, translation(1.0), 3, SpawnReason.TRANSLATION)
        record = map_record(topo)
        self.assertEqual(len(record['nodes']), len(topo))
        self.assertEqual(record['edges'][0]['relative_pose']['translation'], [1.0, 0.0, 0.0])
        with tempfile.TemporaryDirectory() as tmp:
            path = export_map(topo, tmp)
            with open(path, encoding='utf-8') as f:
                self.assertEqual(yaml.safe_load(f), record)
            self.assertTrue((Path(tmp) / 'frames' / 'frame_001.pt').exists())
