import numpy as np
from django.test import SimpleTestCase

from core.exceptions import ConfigError, EmptyInputError
from core.geometry import ColorPointCloud

from .replay import ReplayBuffer, mix_replay
from .sampler import (
    SampleSet,
    SampleSource,
    SamplerConfig,
    concentric_disk,
    sample_observation,
    sample_rays,
    sample_surface_plane,
)


def wall(count=200, seed=0, depth=2.0):
    """Points on the plane z = depth, seen from the origin."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-1.0, 1.0, size=(count, 2))
    return ColorPointCloud(np.column_stack([xy, np.full(count, depth)]), rng.random((count, 3)))


def labelled(count, frame_index, label=0.5):
    return SampleSet(
        np.zeros((count, 3)), np.zeros((count, 3)), np.full(count, label),
        np.full(count, SampleSource.FRONT, dtype=np.int8), np.full(count, frame_index, dtype=np.int64),
    )


class SamplerConfigTest(SimpleTestCase):
    def test_defaults(self):
        cfg = SamplerConfig()
        self.assertEqual(cfg.front_range, (0.3, 0.99))
        self.assertEqual(cfg.behind_range, (1.01, 1.1))
        self.assertEqual(cfg.dense_factor, 4)

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            SamplerConfig(front_range=(0.5, 0.4))
        with self.assertRaises(ConfigError):
            SamplerConfig(behind_band=0.005)
        with self.assertRaises(ConfigError):
            SamplerConfig(dense_factor=0)


class SampleRaysTest(SimpleTestCase):
    def setUp(self):
        self.cloud = wall()
        self.origin = np.zeros(3)
        self.cfg = SamplerConfig(n_front=3, n_behind=2)
        self.samples = sample_rays(self.cloud, self.origin, self.cfg, rng_seed=0, frame_index=4)

    def test_counts_and_tags(self):
        self.assertEqual(len(self.samples), 200 * 5)
        self.assertEqual(np.count_nonzero(self.samples.source == SampleSource.FRONT), 600)
        self.assertEqual(np.count_nonzero(self.samples.source == SampleSource.BEHIND), 400)
        self.assertTrue((self.samples.frame_index == 4).all())

    def test_labels_follow_ray_position(self):
        # every sample lies on the ray to its point, labelled d - |s - e|
        distance = np.linalg.norm(self.samples.positions - self.origin, axis=1)
        front = self.samples.source == SampleSource.FRONT
        depths = np.repeat(np.linalg.norm(self.cloud.positions, axis=1), 3)
        np.testing.assert_allclose(self.samples.sdf[front], depths - distance[front], atol=1e-12)
        self.assertTrue((self.samples.sdf[front] > 0).all())
        self.assertTrue((distance[front] < depths).all())

    def test_behind_samples_stay_in_band(self):
        behind = self.samples.source == SampleSource.BEHIND
        depths = np.repeat(np.linalg.norm(self.cloud.positions, axis=1), 2)
        distance = np.linalg.norm(self.samples.positions[behind], axis=1)
        self.assertTrue((self.samples.sdf[behind] < 0).all())
        self.assertTrue((distance > depths).all())
        self.assertTrue((distance <= 1.1 * depths + 1e-12).all())

    def test_colors_are_copied(self):
        front = self.samples.source == SampleSource.FRONT
        np.testing.assert_array_equal(self.samples.colors[front], np.repeat(self.cloud.colors, 3, axis=0))

    def test_zero_depth_points_are_skipped(self):
        cloud = ColorPointCloud([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        samples = sample_rays(cloud, np.zeros(3), SamplerConfig(), rng_seed=0)
        self.assertEqual(samples.skipped, 1)
        self.assertEqual(len(samples), 3)

    def test_deterministic(self):
        again = sample_rays(self.cloud, self.origin, self.cfg, rng_seed=0, frame_index=4)
        np.testing.assert_array_equal(again.positions, self.samples.positions)
        np.testing.assert_array_equal(again.sdf, self.samples.sdf)

    def test_empty_cloud(self):
        with self.assertRaises(ValueError):
            sample_rays(ColorPointCloud.empty(), self.origin, self.cfg, rng_seed=0)


class SurfacePlaneTest(SimpleTestCase):
    def test_samples_lie_on_the_facing_disk(self):
        cloud = wall(50)
        cfg = SamplerConfig(n_surface=20, surface_radius=0.05)
        samples = sample_surface_plane(cloud, np.zeros(3), cfg, rng_seed=1)
        centers = np.repeat(cloud.positions, 20, axis=0)
        normals = -centers / np.linalg.norm(centers, axis=1, keepdims=True)
        offsets = samples.positions - centers
        self.assertLess(np.max(np.abs(np.sum(offsets * normals, axis=1))), 1e-9)
        self.assertTrue((np.linalg.norm(offsets, axis=1) <= 0.05 + 1e-12).all())
        self.assertTrue((samples.sdf == 0).all())

    def test_zero_radius_keeps_the_point(self):
        cloud = wall(10)
        samples = sample_surface_plane(cloud, np.zeros(3), SamplerConfig(surface_radius=0.0), rng_seed=2)
        np.testing.assert_array_equal(samples.positions, cloud.positions)

    def test_disk_mean_is_the_point(self):
        cloud = ColorPointCloud([[0.3, -0.2, 2.0]])
        cfg = SamplerConfig(n_surface=10_000, surface_radius=0.05)
        samples = sample_surface_plane(cloud, np.zeros(3), cfg, rng_seed=3)
        error = np.linalg.norm(samples.positions.mean(axis=0) - cloud.positions[0])
        self.assertLess(error, 3.0 * 0.05 / np.sqrt(10_000))

    def test_concentric_disk_stays_in_unit_disk(self):
        rng = np.random.default_rng(4)
        x, y = concentric_disk(rng.random(1000), rng.random(1000))
        self.assertTrue((x ** 2 + y ** 2 <= 1.0 + 1e-12).all())
        x, y = concentric_disk(np.array([0.5]), np.array([0.5]))
        self.assertEqual((x[0], y[0]), (0.0, 0.0))

    def test_observation_combines_both_samplers(self):
        samples = sample_observation(wall(30), np.zeros(3), SamplerConfig(), rng_seed=5)
        self.assertEqual(len(samples), 30 * 4)
        self.assertEqual(np.count_nonzero(samples.source == SampleSource.SURFACE), 30)


class ReplayBufferTest(SimpleTestCase):
    def test_capacity_is_respected(self):
        buffer = ReplayBuffer(capacity=1000, min_per_frame=50)
        for index in range(8):
            buffer.add(labelled(300, index))
            self.assertLessEqual(len(buffer), 1000)
        self.assertEqual(buffer.frame_indices[-1], 7)
        self.assertEqual(len(buffer.frame_samples(7)), 300)

    def test_protected_frames_are_not_dropped(self):
        buffer = ReplayBuffer(capacity=200, min_per_frame=100)
        buffer.add(labelled(150, 0))
        buffer.add(labelled(150, 1), protected=(0,))
        self.assertIn(0, buffer.frame_indices)
        self.assertLessEqual(len(buffer), 200)

    def test_invalid_capacity(self):
        with self.assertRaises(ValueError):
            ReplayBuffer(capacity=0)


class MixReplayTest(SimpleTestCase):
    def setUp(self):
        self.buffer = ReplayBuffer()
        for index in range(4):
            self.buffer.add(labelled(200, index))
        self.new = labelled(500, 99)

    def test_empty_buffer_gives_new_samples_only(self):
        batch = mix_replay(ReplayBuffer(), self.new, 0.5, 100, rng_seed=0)
        self.assertEqual(len(batch), 100)
        self.assertTrue((batch.frame_index == 99).all())

    def test_full_new_fraction_skips_replay(self):
        batch = mix_replay(self.buffer, self.new, 1.0, 100, rng_seed=0)
        self.assertTrue((batch.frame_index == 99).all())

    def test_replay_is_stratified_across_frames(self):
        batch_size = 400
        counts = np.zeros(4)
        for seed in range(100):
            batch = mix_replay(self.buffer, self.new, 0.5, batch_size, rng_seed=seed)
            self.assertEqual(len(batch), batch_size)
            self.assertEqual(np.count_nonzero(batch.frame_index == 99), batch_size // 2)
            counts += [np.count_nonzero(batch.frame_index == i) for i in range(4)]
        expected = 100 * batch_size / 8
        sigma = np.sqrt(100 * (batch_size / 2) * 0.25 * 0.75)
        self.assertTrue((np.abs(counts - expected) < 3 * sigma).all())

    def test_short_new_samples_are_topped_up_from_replay(self):
        batch = mix_replay(self.buffer, labelled(30, 99), 0.5, 400, rng_seed=0)
        self.assertEqual(len(batch), 400)
        self.assertEqual(np.count_nonzero(batch.frame_index == 99), 30)

    def test_replay_overflow_moves_to_frames_with_room(self):
        buffer = ReplayBuffer()
        buffer.add(labelled(10, 0))
        buffer.add(labelled(300, 1))
        batch = mix_replay(buffer, labelled(500, 99), 0.5, 400, rng_seed=1)
        self.assertEqual(len(batch), 400)
        self.assertEqual(np.count_nonzero(batch.frame_index == 0), 10)
        self.assertEqual(np.count_nonzero(batch.frame_index == 1), 190)

    def test_nothing_to_draw(self):
        with self.assertRaises(EmptyInputError):
            mix_replay(ReplayBuffer(), SampleSet.empty(), 0.5, 100, rng_seed=0)
