import math

import numpy as np
from django.test import SimpleTestCase

from .exceptions import DimensionError, IngestionError, NearSingularityError
from .geometry import (
    CameraIntrinsics,
    ColorPointCloud,
    Pose,
    RGBDFrame,
    backproject,
    compose,
    exp_map,
    inverse,
    log_map,
    look_at,
    orthonormal_drift,
    project,
    rotation_angle,
    transform_cloud,
)
from .shapes import Box, Room, Scene, Sphere


def frame_with_depth(depth):
    depth = np.asarray(depth, dtype=np.float64)
    return RGBDFrame(np.full(depth.shape + (3,), 0.5), depth)


def random_pose(rng, max_angle=math.pi - 0.1):
    axis = rng.normal(size=3)
    axis *= rng.uniform(0.0, max_angle) / np.linalg.norm(axis)
    return exp_map(np.concatenate([axis, rng.normal(size=3)]))


class CameraIntrinsicsTest(SimpleTestCase):
    def test_invalid_values(self):
        with self.assertRaises(ValueError):
            CameraIntrinsics(0.0, 525.0, 319.5, 239.5, 640, 480)
        with self.assertRaises(ValueError):
            CameraIntrinsics(525.0, 525.0, 640.0, 239.5, 640, 480)
        with self.assertRaises(ValueError):
            CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480, depth_scale=0.0)

    def test_scaled(self):
        half = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480).scaled(0.5)
        self.assertEqual((half.width, half.height), (320, 240))
        self.assertAlmostEqual(half.focal_x, 262.5)


class RGBDFrameTest(SimpleTestCase):
    def test_mismatched_images(self):
        with self.assertRaises(DimensionError):
            RGBDFrame(np.zeros((4, 5, 3)), np.zeros((4, 6)))

    def test_negative_or_nan_depth(self):
        with self.assertRaises(IngestionError):
            frame_with_depth([[1.0, -0.5]])
        with self.assertRaises(IngestionError):
            frame_with_depth([[1.0, np.nan]])


class BackprojectTest(SimpleTestCase):
    def setUp(self):
        self.sensor = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)

    def test_principal_point_ray(self):
        intrinsics = CameraIntrinsics(10.0, 10.0, 2.0, 1.0, 5, 3)
        depth = np.zeros((3, 5))
        depth[1, 2] = 2.0
        cloud = backproject(frame_with_depth(depth), intrinsics)
        np.testing.assert_allclose(cloud.positions, [[0.0, 0.0, 2.0]])

    def test_known_pixel(self):
        depth = np.zeros((480, 640))
        depth[300, 420] = 1.5
        cloud = backproject(frame_with_depth(depth), self.sensor)
        self.assertEqual(len(cloud), 1)
        np.testing.assert_allclose(cloud.positions[0], [0.28714286, 0.17285714, 1.5], atol=1e-7)

    def test_zero_depth_gives_empty_cloud(self):
        cloud = backproject(frame_with_depth(np.zeros((480, 640))), self.sensor)
        self.assertEqual(len(cloud), 0)

    def test_mismatched_dimensions(self):
        with self.assertRaises(DimensionError):
            backproject(frame_with_depth(np.ones((10, 10))), self.sensor)

    def test_stride_keeps_grid_pixels(self):
        intrinsics = CameraIntrinsics(10.0, 10.0, 2.0, 1.0, 5, 3)
        cloud = backproject(frame_with_depth(np.ones((3, 5))), intrinsics, stride=2)
        self.assertEqual(len(cloud), 6)

    def test_reprojection_recovers_pixels(self):
        rng = np.random.default_rng(0)
        depth = rng.uniform(0.5, 4.0, size=(480, 640))
        depth[rng.random((480, 640)) < 0.2] = 0.0
        cloud = backproject(frame_with_depth(depth), self.sensor, stride=7)
        rows, cols = np.meshgrid(np.arange(0, 480, 7), np.arange(0, 640, 7), indexing='ij')
        valid = depth[rows, cols] > 0
        expected = np.stack([cols[valid], rows[valid]], axis=1).astype(np.float64)
        np.testing.assert_allclose(project(cloud.positions, self.sensor), expected, atol=1e-6)


class ExpLogTest(SimpleTestCase):
    def test_zero_twist_is_identity(self):
        pose = exp_map(np.zeros(6))
        np.testing.assert_array_equal(pose.as_matrix(), np.eye(4))
        np.testing.assert_allclose(log_map(Pose.identity()), np.zeros(6))

    def test_quarter_turn_about_z(self):
        pose = exp_map([0.0, 0.0, math.pi / 2.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(pose.rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)
        np.testing.assert_allclose(pose.translation, np.zeros(3))

    def test_roundtrip(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            axis = rng.normal(size=3)
            axis *= rng.uniform(0.0, 3.0) / np.linalg.norm(axis)
            xi = np.concatenate([axis, rng.uniform(-5.0, 5.0, size=3)])
            self.assertLess(np.max(np.abs(log_map(exp_map(xi)) - xi)), 1e-8)

    def test_small_angles(self):
        xi = np.array([1e-9, -2e-9, 3e-10, 0.1, 0.2, 0.3])
        np.testing.assert_allclose(log_map(exp_map(xi)), xi, atol=1e-12)

    def test_half_turn_is_singular(self):
        with self.assertRaises(NearSingularityError):
            log_map(Pose(np.diag([1.0, -1.0, -1.0]), np.zeros(3)))
        self.assertAlmostEqual(rotation_angle(np.diag([1.0, -1.0, -1.0])), math.pi)

    def test_twist_shape(self):
        with self.assertRaises(DimensionError):
            exp_map(np.zeros(3))


class PoseTest(SimpleTestCase):
    def test_rejects_non_rotations(self):
        with self.assertRaises(ValueError):
            Pose(np.diag([1.0, 1.0, 1.1]), np.zeros(3))
        with self.assertRaises(ValueError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_orthonormality_tolerance_is_tight(self):
        with self.assertRaises(ValueError):
            Pose(np.diag([1.0 + 1e-8, 1.0, 1.0]), np.zeros(3))
        pose = Pose(np.diag([1.0 + 1e-13, 1.0, 1.0]), np.zeros(3))
        self.assertLess(orthonormal_drift(pose.rotation), 1e-9)

    def test_identity_laws(self):
        rng = np.random.default_rng(2)
        b = random_pose(rng)
        np.testing.assert_allclose(compose(Pose.identity(), b).as_matrix(), b.as_matrix(), atol=1e-15)
        np.testing.assert_array_equal(inverse(Pose.identity()).as_matrix(), np.eye(4))
        np.testing.assert_allclose((b @ b.inverse()).as_matrix(), np.eye(4), atol=1e-12)

    def test_associativity(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
            np.testing.assert_allclose(((a @ b) @ c).as_matrix(), (a @ (b @ c)).as_matrix(), atol=1e-9)

    def test_long_chains_stay_orthonormal(self):
        rng = np.random.default_rng(4)
        pose = Pose.identity()
        for _ in range(10_000):
            pose = pose @ exp_map(np.concatenate([rng.normal(scale=0.05, size=3), rng.normal(size=3)]))
        self.assertLess(orthonormal_drift(pose.rotation), 1e-9)

    def test_quaternion_roundtrip(self):
        rng = np.random.default_rng(5)
        pose = random_pose(rng)
        quat = pose.quaternion()
        self.assertGreaterEqual(quat[3], 0.0)
        rebuilt = Pose.from_quaternion(pose.translation, quat)
        np.testing.assert_allclose(rebuilt.as_matrix(), pose.as_matrix(), atol=1e-12)

    def test_look_at_points_the_optical_axis(self):
        pose = look_at([0.0, 0.0, -3.0], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(pose.rotation[:, 2], [0.0, 0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(pose.rotation[:, 1], [0.0, 1.0, 0.0], atol=1e-12)


class TransformCloudTest(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(6)
        self.cloud = ColorPointCloud(rng.normal(size=(50, 3)), rng.random((50, 3)))

    def test_identity_and_translation(self):
        same = transform_cloud(Pose.identity(), self.cloud)
        np.testing.assert_array_equal(same.positions, self.cloud.positions)
        shifted = transform_cloud(Pose(np.eye(3), [1.0, 0.0, 0.0]), self.cloud)
        np.testing.assert_allclose(shifted.positions[:, 0], self.cloud.positions[:, 0] + 1.0)
        np.testing.assert_array_equal(shifted.colors, self.cloud.colors)

    def test_composition(self):
        rng = np.random.default_rng(7)
        a, b = random_pose(rng), random_pose(rng)
        together = transform_cloud(a @ b, self.cloud)
        stepwise = transform_cloud(a, transform_cloud(b, self.cloud))
        self.assertLess(np.max(np.abs(together.positions - stepwise.positions)), 1e-9)

    def test_cloud_validation(self):
        with self.assertRaises(ValueError):
            ColorPointCloud([[0.0, 0.0, 1.0]], [[1.5, 0.0, 0.0]])
        with self.assertRaises(DimensionError):
            ColorPointCloud(np.zeros((2, 3)), np.zeros((3, 3)))


class ShapesTest(SimpleTestCase):
    def test_sphere(self):
        sphere = Sphere([0.0, 0.0, 0.0], 2.0)
        np.testing.assert_allclose(sphere.distance([[0, 0, 0], [3, 0, 0]]), [-2.0, 1.0])
        np.testing.assert_allclose(sphere.gradient([[0, 3, 0]]), [[0.0, 1.0, 0.0]])

    def test_disc_in_2d(self):
        disc = Sphere([1.0, 1.0], 0.5)
        self.assertEqual(disc.dim, 2)
        self.assertAlmostEqual(disc.distance([2.0, 1.0])[0], 0.5)
        with self.assertRaises(DimensionError):
            disc.distance([[0.0, 0.0, 0.0]])

    def test_box_inside_and_outside(self):
        box = Box([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
        np.testing.assert_allclose(box.distance([[0, 0, 0], [2, 0, 0], [2, 2, 1]]), [-1.0, 1.0, math.sqrt(2.0)])
        np.testing.assert_allclose(box.gradient([[0.5, 0.0, 0.0]]), [[1.0, 0.0, 0.0]])

    def test_room_is_free_inside(self):
        room = Room([0.0, 0.0, 0.0], [2.0, 1.0, 3.0])
        self.assertAlmostEqual(room.distance([[0.0, 0.0, 0.0]])[0], 1.0)
        self.assertLess(room.distance([[0.0, 2.0, 0.0]])[0], 0.0)

    def test_scene_gradient_matches_finite_differences(self):
        scene = Scene([Sphere([0.0, 0.0, 2.0], 0.5), Box([1.5, 0.0, 2.0], [0.3, 0.3, 0.3])])
        points = np.array([[0.2, 0.7, 1.1], [1.0, -0.5, 2.4], [-0.9, 0.3, 2.2]])
        eps = 1e-6
        numeric = np.stack([
            (scene.distance(points + eps * e) - scene.distance(points - eps * e)) / (2.0 * eps) for e in np.eye(3)
        ], axis=1)
        np.testing.assert_allclose(scene.gradient(points), numeric, atol=1e-6)

    def test_scene_query_and_bounds(self):
        scene = Scene([Sphere([0.0, 0.0], 1.0)], bounds=([-2.0, -2.0], [2.0, 2.0]))
        answer = scene.query([[0.0, 1.5], [0.0, 3.0]])
        np.testing.assert_allclose(answer.sdf, [0.5, 2.0])
        np.testing.assert_array_equal(answer.valid, [True, False])
        self.assertTrue(np.isinf(Scene([], bounds=([0.0, 0.0], [1.0, 1.0])).distance([[0.5, 0.5]])[0]))

    def test_scene_intersect_owner(self):
        scene = Scene([Sphere([0.0, 0.0, 5.0], 1.0), Box([0.0, 0.0, 2.0], [0.5, 0.5, 0.5])])
        origins = np.zeros((2, 3))
        directions = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        t, owner = scene.intersect(origins, directions)
        self.assertAlmostEqual(t[0], 1.5)
        np.testing.assert_array_equal(owner, [1, -1])
        self.assertTrue(np.isinf(t[1]))

    def test_sphere_seen_from_inside_is_missed(self):
        t = Sphere([0.0, 0.0, 0.0], 1.0).intersect(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]))
        self.assertTrue(np.isinf(t[0]))

    def test_room_intersect_hits_far_wall(self):
        room = Room([0.0, 0.0, 0.0], [1.0, 1.0, 4.0])
        t = room.intersect(np.zeros((1, 3)), np.array([[0.0, 0.0, 2.0]]))
        self.assertAlmostEqual(t[0], 2.0)
