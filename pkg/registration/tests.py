import numpy as np
from django.test import SimpleTestCase, tag

from core.exceptions import ConfigError, InsufficientOverlapError, SingularSystemError
from core.geometry import ColorPointCloud, Pose, exp_map, look_at, orthonormal_drift
from core.shapes import Box, Room, Scene, Sphere
from field.features import FeatureStore, insert_keypoints
from field.implicit import NeuralField
from field.network import Architecture, NetworkParams
from field.training import TrainingConfig, adaptive_train
from sampling.sampler import SampleSet, SamplerConfig, sample_observation

from .lm import RegistrationConfig, constant_velocity, lm_step, register, residual_and_jacobian

ROOM_HALF = np.array([2.0, 1.5, 2.5])


def furnished_room():
    return Scene(
        [Room([0.0, 0.0, 0.0], ROOM_HALF), Box([0.5, 0.8, 1.0], [0.3, 0.3, 0.3])],
        bounds=(-ROOM_HALF - 0.5, ROOM_HALF + 0.5),
    )


def room_surface(n, rng):
    """Points on the room walls and on the box faces."""
    points = []
    for center, half, count in ((np.zeros(3), ROOM_HALF, n), (np.array([0.5, 0.8, 1.0]), np.full(3, 0.3), n // 4)):
        local = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
        axis = rng.integers(0, 3, size=count)
        sign = rng.choice([-1.0, 1.0], size=count)
        local[np.arange(count), axis] = sign * half[axis]
        points.append(center + local)
    return np.concatenate(points)


def perturbation(rng, degrees=5.0, meters=0.05):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return exp_map(np.concatenate([np.radians(degrees) * axis, np.zeros(3)])), meters * direction


def pose_error(estimate, truth):
    delta = estimate.inverse() @ truth
    return np.degrees(delta.rotation_angle()), float(np.linalg.norm(estimate.translation - truth.translation))


class ResidualTest(SimpleTestCase):
    def test_point_along_gradient_has_no_rotational_part(self):
        scene = Scene([Sphere([0.0, 0.0, 0.0], 1.0)])
        rows = residual_and_jacobian([[0.0, 0.0, 1.5]], scene)
        np.testing.assert_allclose(rows.jacobians[0, :3], 0.0, atol=1e-12)
        np.testing.assert_allclose(rows.jacobians[0, 3:], [0.0, 0.0, 1.0])
        self.assertAlmostEqual(rows.residuals[0], 0.5)

    def test_jacobian_matches_finite_difference(self):
        scene = Scene([Sphere([0.2, -0.1, 3.0], 1.0)])
        pose = exp_map(np.array([0.05, -0.02, 0.1, 0.1, 0.0, -0.2]))
        points = np.array([[0.3, 0.4, 2.2], [-0.5, 0.1, 2.5], [0.1, -0.6, 2.4]])
        rows = residual_and_jacobian(points, scene, pose)
        eps = 1e-6
        for i in range(6):
            delta = np.zeros(6)
            delta[i] = eps
            ahead = residual_and_jacobian(points, scene, exp_map(delta) @ pose)
            behind = residual_and_jacobian(points, scene, exp_map(-delta) @ pose)
            numeric = (ahead.residuals - behind.residuals) / (2 * eps)
            np.testing.assert_allclose(numeric, rows.jacobians[:, i], rtol=1e-3, atol=1e-6)

    def test_out_of_map_points_are_excluded(self):
        rows = residual_and_jacobian([[0.0, 0.0, 0.0], [50.0, 0.0, 0.0]], furnished_room())
        self.assertEqual(rows.usable.tolist(), [True, False])
        self.assertEqual(rows.out_of_map, 1)

    def test_outliers_beyond_cap_are_discarded(self):
        rows = residual_and_jacobian([[0.0, 0.0, 0.0], [1.9, 0.0, 0.0]], furnished_room(), cap=0.3)
        self.assertEqual(rows.usable.tolist(), [False, True])


class LmStepTest(SimpleTestCase):
    def test_zero_residuals_give_zero_step(self):
        step = lm_step(np.zeros(6), np.eye(6), 0.001)
        np.testing.assert_array_equal(step, np.zeros(6))

    def test_pure_translation_solve(self):
        residuals = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.1])
        step = lm_step(residuals, np.eye(6), 0.0)
        np.testing.assert_allclose(step, [0.0, 0.0, 0.0, 0.0, 0.0, -0.1])

    def test_damping_shrinks_the_step(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            jacobians = rng.normal(size=(12, 6))
            residuals = rng.normal(size=12)
            norms = [np.linalg.norm(lm_step(residuals, jacobians, lam)) for lam in (0.0, 0.01, 1.0, 100.0)]
            self.assertTrue(all(a > b for a, b in zip(norms, norms[1:])))

    def test_singular_system(self):
        with self.assertRaises(SingularSystemError):
            lm_step(np.ones(6), np.zeros((6, 6)), 0.0)

    def test_too_few_points(self):
        with self.assertRaises(InsufficientOverlapError):
            lm_step(np.ones(5), np.eye(6)[:5], 0.001)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            RegistrationConfig(lambda_reg=0.0)


class RegisterTest(SimpleTestCase):
    def setUp(self):
        self.scene = furnished_room()
        self.truth = look_at([0.3, -0.2, -1.0], [0.0, 0.2, 1.5])
        world = room_surface(2000, np.random.default_rng(0))
        self.cloud = ColorPointCloud(self.truth.inverse().apply(world))
        self.cfg = RegistrationConfig(outlier_sdf_cap=1.0)

    def test_ground_truth_is_a_fixed_point(self):
        result = register(self.cloud, self.scene, self.truth, self.cfg)
        self.assertTrue(result.converged)
        self.assertLessEqual(result.iterations, 3)
        degrees, meters = pose_error(result.pose, self.truth)
        self.assertLess(np.radians(degrees), 1e-4)
        self.assertLess(meters, 1e-4)

    def test_recovers_small_perturbation(self):
        rotation, offset = perturbation(np.random.default_rng(1))
        init = Pose(rotation.rotation @ self.truth.rotation, self.truth.translation + offset)
        result = register(self.cloud, self.scene, init, self.cfg)
        degrees, meters = pose_error(result.pose, self.truth)
        self.assertLess(degrees, 0.5)
        self.assertLess(meters, 0.005)
        self.assertLess(orthonormal_drift(result.pose.rotation), 1e-9)

    def test_accepted_rmse_never_increases(self):
        rotation, offset = perturbation(np.random.default_rng(2))
        init = Pose(rotation.rotation @ self.truth.rotation, self.truth.translation + offset)
        result = register(self.cloud, self.scene, init, self.cfg)
        history = np.array(result.rmse_history)
        self.assertTrue(np.all(np.diff(history) <= 0))
        self.assertGreaterEqual(result.final_rmse, 0.0)

    def test_cloud_outside_map(self):
        far = ColorPointCloud(self.cloud.positions + 100.0)
        with self.assertRaises(InsufficientOverlapError):
            register(far, self.scene, self.truth, self.cfg)

    def test_subsampling_seed_does_not_matter(self):
        rotation, offset = perturbation(np.random.default_rng(3))
        init = Pose(rotation.rotation @ self.truth.rotation, self.truth.translation + offset)
        cfg = RegistrationConfig(outlier_sdf_cap=1.0, subsample_n=800)
        first = register(self.cloud, self.scene, init, cfg, seed=0)
        second = register(self.cloud, self.scene, init, cfg, seed=1)
        self.assertLess(np.linalg.norm(first.pose.translation - second.pose.translation), 1e-3)

    @tag('slow')
    def test_perturbation_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            rotation, offset = perturbation(rng)
            init = Pose(rotation.rotation @ self.truth.rotation, self.truth.translation + offset)
            result = register(self.cloud, self.scene, init, self.cfg)
            degrees, meters = pose_error(result.pose, self.truth)
            self.assertLess(degrees, 0.5)
            self.assertLess(meters, 0.005)


class ConstantVelocityTest(SimpleTestCase):
    def test_first_guess_is_previous_pose(self):
        previous = exp_map(np.array([0.0, 0.1, 0.0, 1.0, 0.0, 0.0]))
        self.assertIs(constant_velocity(previous), previous)

    def test_extrapolates_constant_motion(self):
        step = exp_map(np.array([0.0, 0.05, 0.0, 0.1, 0.0, 0.0]))
        first = Pose.identity()
        second = first @ step
        guess = constant_velocity(second, first)
        expected = second @ step
        np.testing.assert_allclose(guess.as_matrix(), expected.as_matrix(), atol=1e-12)


def room_walls(n, rng):
    local = rng.uniform(-1.0, 1.0, size=(n, 3)) * ROOM_HALF
    axis = rng.integers(0, 3, size=n)
    local[np.arange(n), axis] = rng.choice([-1.0, 1.0], size=n) * ROOM_HALF[axis]
    return local


@tag('slow')
class LearnedFieldRegisterTest(SimpleTestCase):
    """Registration against a field trained on the walls of an empty room."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        rng = np.random.default_rng(0)
        walls = ColorPointCloud(room_walls(20_000, rng))
        params = NetworkParams(Architecture(), seed=0)
        store = FeatureStore(voxel_size=0.1, feature_dim=params.architecture.feature_dim)
        insert_keypoints(walls, store)
        samples = SampleSet.concatenate([
            sample_observation(walls, eye, SamplerConfig(), rng_seed=i)
            for i, eye in enumerate([[0.0, 0.0, 0.0], [0.8, -0.4, -1.2], [-0.8, 0.4, 1.2]])
        ])
        cfg = TrainingConfig(learning_rate=0.005, batch_size=4096, new_fraction=1.0, max_iters=300)
        adaptive_train(samples, store, params, cfg)
        cls.field = NeuralField(params, store)
        cls.truth = look_at([0.3, -0.2, -1.0], [0.0, 0.2, 1.5])
        cls.cloud = ColorPointCloud(cls.truth.inverse().apply(room_walls(4000, rng)))
        cls.cfg = RegistrationConfig(outlier_sdf_cap=1.0)

    def test_surface_points_sit_on_the_zero_level(self):
        result = self.field.query(self.truth.apply(self.cloud.positions))
        self.assertGreater(np.mean(result.valid), 0.9)
        self.assertLess(np.median(np.abs(result.sdf[result.valid])), 0.05 / 5)

    def test_perturbation_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            rotation, offset = perturbation(rng)
            init = Pose(rotation.rotation @ self.truth.rotation, self.truth.translation + offset)
            result = register(self.cloud, self.field, init, self.cfg)
            degrees, meters = pose_error(result.pose, self.truth)
            self.assertLess(degrees, 0.5)
            self.assertLess(meters, 0.005)
