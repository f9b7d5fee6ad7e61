import math
import tempfile
from pathlib import Path

import numpy as np
import torch
from django.test import SimpleTestCase, tag

from core.exceptions import CheckpointError, ConfigError, EmptyInputError, OutOfMapError
from core.geometry import ColorPointCloud
from sampling.sampler import SampleSet, SampleSource, SamplerConfig, sample_observation

from .checkpoint import load_field, save_field
from .features import FeatureStore, insert_keypoints
from .implicit import NeuralField
from .losses import loss_bce, loss_eikonal, loss_ewc
from .network import Architecture, NetworkParams, forward
from .training import TrainingConfig, adaptive_train, consolidate_ewc, converged, total_loss, train_step


def sphere_cloud(n=800, radius=1.0, seed=0):
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return ColorPointCloud(radius * directions)


def small_field(seed=0, **architecture):
    arch = Architecture(hidden_width=16, hidden_layers=2, pe_bands=2, **architecture)
    params = NetworkParams(arch, seed=seed)
    store = FeatureStore(voxel_size=0.2, feature_dim=arch.feature_dim)
    return params, store


def labelled_batch(positions, sdf):
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = positions.shape[0]
    return SampleSet(
        positions, np.full((n, 3), 0.5), np.asarray(sdf, dtype=np.float64).reshape(n),
        np.full(n, SampleSource.FRONT, dtype=np.int8), np.zeros(n, dtype=np.int64),
    )


class FeatureStoreTest(SimpleTestCase):
    def test_empty_cloud_leaves_store_unchanged(self):
        store = FeatureStore()
        insert_keypoints(ColorPointCloud.empty(), store)
        self.assertEqual(len(store), 0)

    def test_two_points_in_one_voxel_insert_once(self):
        store = FeatureStore(voxel_size=0.1)
        insert_keypoints(ColorPointCloud([[0.01, 0.01, 0.01], [0.05, 0.06, 0.04]]), store)
        self.assertEqual(len(store), 1)

    def test_uniform_cube_voxel_count(self):
        rng = np.random.default_rng(3)
        store = FeatureStore(voxel_size=0.1)
        insert_keypoints(ColorPointCloud(rng.random((60000, 3)) * 0.999), store)
        self.assertGreaterEqual(len(store), 900)
        self.assertLessEqual(len(store), 1100)

    def test_trained_occupant_keeps_its_feature(self):
        store = FeatureStore(voxel_size=0.1, feature_dim=2)
        store.insert([[0.05, 0.05, 0.05]], [[1.0, 2.0]])
        insert_keypoints(ColorPointCloud([[0.04, 0.05, 0.05], [0.55, 0.05, 0.05]]), store)
        self.assertEqual(len(store), 2)
        np.testing.assert_array_equal(store.map_point(0).feature, [1.0, 2.0])

    def test_same_voxel_in_one_batch_keeps_the_last(self):
        store = FeatureStore(voxel_size=0.1, feature_dim=1)
        store.insert([[0.01, 0.01, 0.01], [0.5, 0.0, 0.0], [0.02, 0.02, 0.02]], [[1.0], [5.0], [2.0]])
        self.assertEqual(len(store), 2)
        np.testing.assert_array_equal(store.map_point(0).position, [0.02, 0.02, 0.02])
        np.testing.assert_array_equal(store.map_point(0).feature, [2.0])
        np.testing.assert_array_equal(store.map_point(1).feature, [5.0])

    def test_batch_collision_with_stored_point(self):
        store = FeatureStore(voxel_size=0.1, feature_dim=1)
        store.insert([[0.05, 0.05, 0.05]], [[1.0]])
        store.insert([[0.01, 0.01, 0.01], [0.03, 0.03, 0.03]], [[2.0], [3.0]])
        self.assertEqual(len(store), 1)
        np.testing.assert_array_equal(store.map_point(0).feature, [3.0])

    def test_single_neighbor_returns_its_feature(self):
        store = FeatureStore(voxel_size=0.1, feature_dim=3)
        store.insert([[0.0, 0.0, 0.0]], [[0.1, 0.2, 0.3]])
        feature, ids = store.interpolate([0.05, 0.0, 0.0])
        np.testing.assert_allclose(feature, [0.1, 0.2, 0.3])
        self.assertEqual(list(ids), [0])

    def test_exact_hit_returns_neighbor_feature(self):
        store = FeatureStore(voxel_size=0.1, feature_dim=1)
        store.insert([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]], [[1.0], [3.0]])
        feature, _ = store.interpolate([0.1, 0.0, 0.0])
        self.assertEqual(feature[0], 3.0)

    def test_inverse_distance_weights(self):
        store = FeatureStore(voxel_size=0.1, feature_dim=1)
        store.insert([[0.0, 0.0, 0.0], [0.12, 0.0, 0.0]], [[0.0], [1.0]])
        feature, _ = store.interpolate([0.03, 0.0, 0.0])
        # weights 1/0.03 and 1/0.09
        self.assertAlmostEqual(feature[0], (1 / 0.09) / (1 / 0.03 + 1 / 0.09))

    def test_far_query_is_out_of_map(self):
        store = FeatureStore(voxel_size=0.1, feature_dim=1)
        store.insert([[0.0, 0.0, 0.0]], [[1.0]])
        with self.assertRaises(OutOfMapError):
            store.interpolate([1.0, 0.0, 0.0])


class NetworkTest(SimpleTestCase):
    def test_zero_output_layer_predicts_zero(self):
        params = NetworkParams(Architecture(zero_init_output=True))
        rng = np.random.default_rng(0)
        out = forward(rng.normal(size=(20, 3)), rng.random((20, 3)), rng.normal(size=(20, 8)), params)
        self.assertTrue(torch.all(out.sdf == 0))

    def test_gradient_matches_finite_difference(self):
        params = NetworkParams(seed=4)
        p = np.array([0.3, -0.2, 0.5])
        c = np.array([0.2, 0.4, 0.6])
        f = np.linspace(-0.1, 0.1, 8)
        grad = forward(p, c, f, params).grad_p.numpy()
        eps = 1e-6
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = eps
            high = float(forward(p + step, c, f, params).sdf)
            low = float(forward(p - step, c, f, params).sdf)
            self.assertAlmostEqual(grad[axis], (high - low) / (2 * eps), delta=1e-5 * max(1.0, abs(grad[axis])))

    def test_batch_order_does_not_change_outputs(self):
        params = NetworkParams(seed=1)
        rng = np.random.default_rng(1)
        p, c, f = rng.normal(size=(10, 3)), rng.random((10, 3)), rng.normal(size=(10, 8))
        order = rng.permutation(10)
        straight = forward(p, c, f, params).sdf.numpy()
        shuffled = forward(p[order], c[order], f[order], params).sdf.numpy()
        np.testing.assert_array_equal(straight[order], shuffled)

    def test_same_seed_same_weights(self):
        self.assertTrue(torch.equal(NetworkParams(seed=7).flat(), NetworkParams(seed=7).flat()))


class LossTest(SimpleTestCase):
    def test_bce_at_zero_is_ln2(self):
        self.assertAlmostEqual(float(loss_bce([0.0], [0.0], 0.05)), math.log(2), places=12)

    def test_bce_equal_inputs_is_binary_entropy(self):
        phi = 1 / (1 + math.exp(-0.02 / 0.05))
        entropy = -(phi * math.log(phi) + (1 - phi) * math.log(1 - phi))
        self.assertAlmostEqual(float(loss_bce([0.02], [0.02], 0.05)), entropy, places=12)

    def test_bce_opposite_signs(self):
        # -[phi(-1) ln phi(1) + phi(1) ln phi(-1)]
        self.assertAlmostEqual(float(loss_bce([0.05], [-0.05], 0.05)), 1.044320, places=5)

    def test_bce_rejects_nonpositive_sigma(self):
        with self.assertRaises(ValueError):
            loss_bce([0.0], [0.0], 0.0)

    def test_eikonal(self):
        self.assertEqual(float(loss_eikonal([[1.0, 0.0, 0.0], [0.0, 0.6, 0.8]])), 0.0)
        self.assertEqual(float(loss_eikonal([[0.0, 0.0, 0.0]])), 1.0)
        self.assertAlmostEqual(float(loss_eikonal([[0.5, 0.0, 0.0], [0.0, 1.5, 0.0]])), 0.25)

    def test_ewc_zero_at_anchor(self):
        params = NetworkParams()
        self.assertEqual(float(loss_ewc(params)), 0.0)

    def test_ewc_single_weight(self):
        params = NetworkParams()
        name = 'output.bias'
        params.ewc_importance[name] = torch.full_like(params.ewc_importance[name], 2.0)
        with torch.no_grad():
            params.ewc_anchor[name] = params.decoder.output.bias.detach().clone() - 0.5
        self.assertAlmostEqual(float(loss_ewc(params)), 0.5)


class TrainingTest(SimpleTestCase):
    def setUp(self):
        self.params, self.store = small_field()
        cloud = sphere_cloud()
        insert_keypoints(cloud, self.store)
        self.samples = sample_observation(cloud, [0.0, 0.0, 3.0], SamplerConfig(), rng_seed=0)
        self.near = np.flatnonzero(self.samples.source != SampleSource.FRONT)

    def test_zero_learning_rate_changes_nothing(self):
        cfg = TrainingConfig(learning_rate=0.0, batch_size=256)
        before = self.params.flat().clone()
        features = self.store.features.detach().clone()
        train_step(self.samples.subset(self.near[:256]), self.store, self.params, cfg)
        self.assertTrue(torch.equal(before, self.params.flat()))
        self.assertTrue(torch.equal(features, self.store.features.detach()))

    def test_loss_gradient_matches_finite_difference(self):
        cfg = TrainingConfig()
        batch = self.samples.subset(self.near[:64])
        weight = self.params.decoder.output.bias
        loss, _ = total_loss(batch, self.store, self.params, cfg)
        (analytic,) = torch.autograd.grad(loss, weight)
        eps = 1e-5
        values = []
        for sign in (1.0, -1.0):
            with torch.no_grad():
                weight[0] += sign * eps
            values.append(float(total_loss(batch, self.store, self.params, cfg)[0].detach()))
            with torch.no_grad():
                weight[0] -= sign * eps
        numeric = (values[0] - values[1]) / (2 * eps)
        self.assertAlmostEqual(float(analytic[0]), numeric, delta=1e-4 * max(1.0, abs(numeric)))

    def test_empty_batch_is_rejected(self):
        with self.assertRaises(EmptyInputError):
            train_step(SampleSet.empty(), self.store, self.params, TrainingConfig())

    def test_samples_far_from_map_are_rejected(self):
        batch = labelled_batch([[10.0, 10.0, 10.0]], [1.0])
        with self.assertRaises(EmptyInputError):
            train_step(batch, self.store, self.params, TrainingConfig())

    def test_converged_field_stops_after_window(self):
        cfg = TrainingConfig(learning_rate=0.0, batch_size=len(self.samples), new_fraction=1.0)
        report = adaptive_train(self.samples, self.store, self.params, cfg)
        self.assertEqual(report.iterations, cfg.window)
        self.assertEqual(report.stop_reason, 'converged')

    def test_max_iters_cap(self):
        cfg = TrainingConfig(learning_rate=0.01, max_iters=3, convergence_threshold=-1.0, batch_size=256)
        report = adaptive_train(self.samples, self.store, self.params, cfg)
        self.assertEqual(report.iterations, 3)
        self.assertEqual(report.stop_reason, 'max_iters')

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            TrainingConfig(max_iters=0)

    def test_convergence_needs_a_flat_window(self):
        self.assertTrue(converged([0.50, 0.50, 0.50], 3, 1e-4))
        self.assertFalse(converged([0.50, 0.40, 0.30], 3, 1e-4))
        self.assertFalse(converged([0.50, 0.50], 3, 1e-4))

    def test_rising_loss_is_not_convergence(self):
        self.assertFalse(converged([0.30, 0.40, 0.50], 3, 1e-4))
        self.assertFalse(converged([0.30, 0.30, 2.00], 3, 1e-4))

    def test_feature_gradient_matches_finite_difference(self):
        cfg = TrainingConfig()
        batch = self.samples.subset(self.near[:64])
        loss, _ = total_loss(batch, self.store, self.params, cfg)
        (analytic,) = torch.autograd.grad(loss, self.store.features)
        index = np.unravel_index(int(torch.argmax(analytic.abs())), tuple(analytic.shape))
        eps = 1e-5
        values = []
        for sign in (1.0, -1.0):
            with torch.no_grad():
                self.store.features[index] += sign * eps
            values.append(float(total_loss(batch, self.store, self.params, cfg)[0].detach()))
            with torch.no_grad():
                self.store.features[index] -= sign * eps
        numeric = (values[0] - values[1]) / (2 * eps)
        self.assertNotEqual(float(analytic[index]), 0.0)
        self.assertAlmostEqual(float(analytic[index]), numeric, delta=1e-4 * max(1.0, abs(numeric)))

    @tag('slow')
    def test_fifty_steps_mostly_decrease(self):
        cfg = TrainingConfig(learning_rate=0.005)
        values = [train_step(self.samples, self.store, self.params, cfg)[2] for _ in range(50)]
        rises = np.count_nonzero(np.diff(values) > 0)
        self.assertLessEqual(rises, 5)
        self.assertLess(values[-1], values[0])


def visible_samples(cloud, eyes, seed=0, center=(0.0, 0.0, 0.0)):
    """Ray and disk samples of a sphere cloud, each eye seeing only its facing cap."""
    center = np.asarray(center, dtype=np.float64)
    sets = []
    for i, eye in enumerate(np.asarray(eyes, dtype=np.float64)):
        offsets = cloud.positions - center
        radius = np.linalg.norm(offsets, axis=1)
        facing = np.sum(offsets * (eye - cloud.positions), axis=1) > 0.05 * radius
        visible = ColorPointCloud(cloud.positions[facing], cloud.colors[facing])
        sets.append(sample_observation(visible, eye, SamplerConfig(), rng_seed=seed + i))
    return SampleSet.concatenate(sets)


ORBIT = [[0, 0, 3.0], [3.0, 0, 0], [0, 0, -3.0], [-3.0, 0, 0], [0, 3.0, 0], [0, -3.0, 0],
         [2.1, 2.1, 0], [-2.1, 0, 2.1]]


@tag('slow')
class FieldQualityTest(SimpleTestCase):
    """A unit sphere trained from an orbit of views matches its analytic SDF near the surface."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.params = NetworkParams(Architecture(), seed=2)
        cls.store = FeatureStore(voxel_size=0.1, feature_dim=cls.params.architecture.feature_dim)
        cloud = sphere_cloud(n=10_000)
        insert_keypoints(cloud, cls.store)
        cls.cfg = TrainingConfig(learning_rate=0.005, batch_size=4096, new_fraction=1.0, max_iters=300)
        cls.report = adaptive_train(visible_samples(cloud, ORBIT), cls.store, cls.params, cls.cfg)

        rng = np.random.default_rng(7)
        directions = rng.normal(size=(4000, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radius = rng.uniform(0.9, 1.1, size=4000)
        result = NeuralField(cls.params, cls.store).query(directions * radius[:, None])
        cls.error = np.abs(result.sdf[result.valid] - (radius[result.valid] - 1.0))
        cls.grad_norm = np.linalg.norm(result.grad[result.valid], axis=1)
        cls.coverage = np.mean(result.valid)

    def test_converges_within_budget(self):
        self.assertLessEqual(self.report.iterations, 300)
        excess = self.report.final_bce - self.report.floor_bce
        self.assertLess(excess, 0.2 * (self.report.initial_bce - self.report.floor_bce))

    def test_sdf_error_near_surface(self):
        self.assertGreater(self.coverage, 0.5)
        self.assertLess(self.error.mean(), 0.02)

    def test_gradient_norm_near_one(self):
        self.assertGreaterEqual(self.grad_norm.mean(), 0.8)
        self.assertLessEqual(self.grad_norm.mean(), 1.2)


class EwcTest(SimpleTestCase):
    def setUp(self):
        self.params, self.store = small_field()
        cloud = sphere_cloud(n=300)
        insert_keypoints(cloud, self.store)
        self.samples = sample_observation(cloud, [0.0, 0.0, 3.0], SamplerConfig(), rng_seed=0)
        self.near = np.flatnonzero(self.samples.source != SampleSource.FRONT)

    def test_importance_is_non_negative_and_anchor_moves(self):
        cfg = TrainingConfig(fisher_samples=64)
        consolidate_ewc(self.params, [self.samples], self.store, cfg)
        for name, theta in self.params.named_parameters():
            self.assertTrue(torch.all(self.params.ewc_importance[name] >= 0))
            self.assertTrue(torch.equal(self.params.ewc_anchor[name], theta.detach()))
        self.assertEqual(self.params.ewc_count, 64)

    def test_zero_gradients_give_zero_importance(self):
        params = NetworkParams(Architecture(hidden_width=16, hidden_layers=2, pe_bands=2))
        with torch.no_grad():
            for p in params.parameters():
                p.zero_()
        # sdf and label both zero: the BCE gradient vanishes
        batch = labelled_batch(self.store.positions[:20], np.zeros(20))
        consolidate_ewc(params, [batch], self.store, TrainingConfig(fisher_samples=20))
        for value in params.ewc_importance.values():
            self.assertTrue(torch.all(value == 0))

    def test_empty_batches_are_rejected(self):
        with self.assertRaises(EmptyInputError):
            consolidate_ewc(self.params, [], self.store, TrainingConfig())

    def test_ewc_penalises_drift_after_consolidation(self):
        cfg = TrainingConfig(fisher_samples=64, learning_rate=0.05, batch_size=256)
        consolidate_ewc(self.params, [self.samples], self.store, cfg)
        train_step(self.samples.subset(self.near[:256]), self.store, self.params, cfg)
        self.assertGreater(float(loss_ewc(self.params)), 0.0)

    def test_doubling_gradients_quadruples_importance(self):
        single, double = small_field()[0], small_field()[0]
        consolidate_ewc(single, [self.samples], self.store, TrainingConfig(fisher_samples=64))
        consolidate_ewc(double, [self.samples], self.store, TrainingConfig(fisher_samples=64, bce_weight=2.0))
        for name, value in single.ewc_importance.items():
            torch.testing.assert_close(double.ewc_importance[name], 4.0 * value, rtol=1e-10, atol=1e-300)

    @tag('slow')
    def test_consolidation_limits_forgetting(self):
        first = sphere_cloud(n=1500, radius=0.5, seed=1)
        second = ColorPointCloud(sphere_cloud(n=1500, radius=0.5, seed=2).positions + [3.0, 0.0, 0.0])
        eyes = np.array([[0, 0, 2.0], [2.0, 0, 0], [0, 0, -2.0], [-2.0, 0, 0]])
        wins = 0
        for seed in range(5):
            params, store = small_field(seed=seed)
            insert_keypoints(first, store)
            insert_keypoints(second, store, rng_seed=1)
            cfg = TrainingConfig(learning_rate=0.005, batch_size=1024, new_fraction=1.0,
                                 max_iters=100, convergence_threshold=-1.0)
            adaptive_train(visible_samples(first, eyes, seed=seed), store, params, cfg)
            consolidate_ewc(params, [visible_samples(first, eyes, seed=seed)], store, cfg)
            held_out = visible_samples(first, eyes, seed=100 + seed)

            losses = {}
            for weight in (0.0, 0.1):
                field = NeuralField(params, store).copy()
                later = TrainingConfig(learning_rate=0.005, batch_size=1024, new_fraction=1.0, max_iters=100,
                                       convergence_threshold=-1.0, ewc_weight=weight)
                adaptive_train(visible_samples(second, eyes + [3.0, 0.0, 0.0], seed=seed, center=(3.0, 0.0, 0.0)),
                               field.store, field.params, later)
                result = field.query(held_out.positions, held_out.colors)
                losses[weight] = float(loss_bce(result.sdf[result.valid], held_out.sdf[result.valid], later.sigma))
            wins += losses[0.1] < losses[0.0]
        self.assertGreaterEqual(wins, 4)


class NeuralFieldTest(SimpleTestCase):
    def test_unobserved_points_are_invalid(self):
        params, store = small_field()
        insert_keypoints(sphere_cloud(n=2000), store)
        field = NeuralField(params, store)
        result = field.query([[0.0, 0.0, 1.0], [5.0, 5.0, 5.0]])
        self.assertEqual(result.valid.tolist(), [True, False])
        self.assertTrue(np.isnan(result.sdf[1]))
        self.assertTrue(np.isfinite(result.sdf[0]))

    def test_freeze_stops_gradients(self):
        params, store = small_field()
        field = NeuralField(params, store)
        field.freeze()
        self.assertTrue(field.frozen)
        self.assertFalse(any(p.requires_grad for p in field.params.parameters()))

    def test_copy_is_independent(self):
        params, store = small_field()
        insert_keypoints(sphere_cloud(n=100), store)
        field = NeuralField(params, store)
        other = field.copy()
        with torch.no_grad():
            other.params.decoder.output.bias += 1.0
        self.assertFalse(torch.equal(field.params.flat(), other.params.flat()))

    def test_feature_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            NeuralField(NetworkParams(), FeatureStore(feature_dim=4))


class CheckpointTest(SimpleTestCase):
    def test_save_and_load_reproduce_queries(self):
        params, store = small_field(seed=3)
        insert_keypoints(sphere_cloud(n=200), store)
        field = NeuralField(params, store)
        points = sphere_cloud(n=20, radius=1.05, seed=9).positions
        with tempfile.TemporaryDirectory() as tmp:
            path = save_field(field, Path(tmp) / 'frame_000.pt')
            loaded = load_field(path)
        np.testing.assert_array_equal(field.query(points).sdf, loaded.query(points).sdf)
        self.assertEqual(len(loaded), len(field))

    def test_missing_or_foreign_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CheckpointError):
                load_field(Path(tmp) / 'missing.pt')
            foreign = Path(tmp) / 'foreign.pt'
            torch.save({'format': 'other'}, foreign)
            with self.assertRaises(CheckpointError):
                load_field(foreign)
