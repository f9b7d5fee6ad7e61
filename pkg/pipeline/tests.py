import math
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import yaml
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings, tag

from core.exceptions import ConfigError, EmptySequenceError, IngestionError, InsufficientDataError
from core.geometry import Pose, exp_map
from core.shapes import Sphere
from planner.worlds import AnalyticWorld

from .bench import bench_planner
from .config import RunConfig, dump_config, load_config
from .evaluation import evaluate_ate, evaluate_estimate, rigid_alignment, translational_rmse
from .mapping import Mapper, ObservationRecord, RunReport, run_mapping
from .models import MappingRun, PlannerBenchmark, record_benchmark
from .plots import HEADERS, emit_plots
from .synth import (
    SyntheticSequence,
    box_room,
    loop_square,
    render_depth,
    sphere_orbit,
    sphere_trace,
    synth_world,
    write_dataset,
)
from .tum import associate, load_tum, read_trajectory, write_trajectory


def quick_config(**run):
    """Small network and short optimizations; a few seconds per dozen observations."""
    return RunConfig().replace(
        sampler={'dense_factor': 4},
        network={'feature_dim': 4, 'hidden_width': 32, 'hidden_layers': 2, 'pe_bands': 2},
        training={'max_iters': 10, 'batch_size': 512, 'fisher_samples': 32},
        registration={'max_iters': 10, 'subsample_n': 256},
        spawn={'max_translation': 100.0, 'max_viewpoint': math.pi, 'max_frames': 12},
        run=run,
    )


def static_sequence(count):
    orbit = sphere_orbit(2)
    return SyntheticSequence('static', orbit.scene, [orbit.poses[0]] * count, orbit.intrinsics)


def write_list(path, lines):
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


class RunConfigTest(SimpleTestCase):
    def test_dump_and_load_give_the_same_config(self):
        config = RunConfig().replace(run={'seed': 7}, planner={'clearance': 0.4})
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.yaml'
            dump_config(config, path)
            self.assertEqual(load_config(path), config)

    def test_unknown_section_and_key(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'optimizer': {}})
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'training': {'momentum': 0.9}})

    def test_invalid_value_is_config_error(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'sampler': {'front_range': [0.9, 0.3]}})

    def test_presets_and_overrides(self):
        desk = load_config(preset='desk')
        self.assertEqual(desk.sampler.dense_factor, 8)
        self.assertEqual(desk.map.voxel_size, 0.05)
        load_config(preset='paper')
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'override.yaml'
            path.write_text('training:\n  max_iters: 7\n', encoding='utf-8')
            config = load_config(path, preset='desk')
        self.assertEqual(config.training.max_iters, 7)
        self.assertEqual(config.training.batch_size, 2048)

    def test_missing_preset(self):
        with self.assertRaises(ConfigError):
            load_config(preset='nonexistent')


class TumTest(SimpleTestCase):
    def test_exact_timestamps_give_one_triple_each(self):
        with tempfile.TemporaryDirectory() as tmp:
            write_list(Path(tmp) / 'rgb.txt', ['# color', '1.0 rgb/1.png', '2.0 rgb/2.png', '3.0 rgb/3.png'])
            write_list(Path(tmp) / 'depth.txt', ['1.0 depth/1.png', '2.0 depth/2.png', '3.0 depth/3.png'])
            write_list(Path(tmp) / 'groundtruth.txt', [f'{t}.0 0 0 0 0 0 0 1' for t in (1, 2, 3)])
            sequence = load_tum(tmp)
        self.assertEqual(len(sequence), 3)
        self.assertEqual(sequence.timestamps, [1.0, 2.0, 3.0])
        self.assertEqual(sequence.entries[1].depth_path.name, '2.png')
        self.assertEqual(sequence.intrinsics.focal_x, 525.0)

    def test_association_window(self):
        self.assertEqual(associate([0.0], [0.015]), [(0, 0)])
        self.assertEqual(associate([0.0], [0.05]), [])

    def test_association_is_one_to_one(self):
        pairs = associate([0.0, 0.01], [0.005])
        self.assertEqual(len(pairs), 1)

    def test_comment_only_lists(self):
        with tempfile.TemporaryDirectory() as tmp:
            for name in ('rgb.txt', 'depth.txt', 'groundtruth.txt'):
                write_list(Path(tmp) / name, ['# nothing here'])
            with self.assertRaises(EmptySequenceError):
                load_tum(tmp)

    def test_missing_directory(self):
        with self.assertRaises(IngestionError):
            load_tum('/nonexistent/sequence')

    def test_sensor_from_directory_name(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp) / 'rgbd_dataset_freiburg1_desk'
            root.mkdir()
            write_list(root / 'rgb.txt', ['1.0 rgb/1.png'])
            write_list(root / 'depth.txt', ['1.0 depth/1.png'])
            write_list(root / 'groundtruth.txt', ['1.0 0 0 0 0 0 0 1'])
            self.assertEqual(load_tum(root).intrinsics.focal_x, 517.3)

    def test_trajectory_file(self):
        poses = [exp_map(np.array([0.1, -0.2, 0.05, 1.0, 2.0, 3.0]) * k) for k in range(3)]
        with tempfile.TemporaryDirectory() as tmp:
            path = write_trajectory(Path(tmp) / 'trajectory.txt', [0.0, 0.5, 1.0], poses)
            self.assertTrue(path.read_text().startswith('# timestamp tx ty tz qx qy qz qw'))
            timestamps, read = read_trajectory(path)
        self.assertEqual(timestamps, [0.0, 0.5, 1.0])
        for expected, pose in zip(poses, read):
            np.testing.assert_allclose(pose.as_matrix(), expected.as_matrix(), atol=1e-8)


class SynthTest(SimpleTestCase):
    def test_sphere_center_depth(self):
        sequence = sphere_orbit(3)
        depth, owner = render_depth(sequence.scene, sequence.poses[0], sequence.intrinsics)
        self.assertAlmostEqual(depth[30, 40], 1.0, places=9)
        self.assertTrue((owner == 0).all())

    def test_closed_form_matches_sphere_tracing(self):
        for sequence in (sphere_orbit(3), box_room(3)):
            pose = sequence.poses[0]
            closed, _ = render_depth(sequence.scene, pose, sequence.intrinsics)
            traced = sphere_trace(sequence.scene, pose, sequence.intrinsics)
            both = (closed > 0) & (traced > 0)
            self.assertGreater(both.mean(), 0.9)
            np.testing.assert_allclose(traced[both], closed[both], atol=1e-6)

    def test_loop_returns_to_start(self):
        sequence = loop_square(40)
        np.testing.assert_array_equal(sequence.poses[-1].as_matrix(), sequence.poses[0].as_matrix())

    def test_unknown_world(self):
        with self.assertRaises(ConfigError):
            synth_world('moon-base')

    def test_written_dataset_reads_back(self):
        sequence = sphere_orbit(3)
        with tempfile.TemporaryDirectory() as tmp:
            write_dataset(sequence, tmp)
            loaded = load_tum(tmp)
            frame = next(loaded.frames())
        self.assertEqual(len(loaded), 3)
        self.assertEqual(loaded.intrinsics, sequence.intrinsics)
        expected = next(sequence.frames())
        np.testing.assert_allclose(frame.depth, expected.depth, atol=1.0 / 5000.0)
        np.testing.assert_allclose(
            loaded.ground_truth_poses()[2].translation, sequence.poses[2].translation, atol=1e-8,
        )


class RunReportTest(SimpleTestCase):
    def report(self, skipped):
        records = [ObservationRecord(i, i / 30.0, 0, skipped=i < skipped) for i in range(10)]
        return RunReport('test', records)

    def test_degraded_above_fraction(self):
        self.assertFalse(self.report(1).degraded)
        self.assertTrue(self.report(2).degraded)
        self.assertFalse(RunReport('empty').degraded)

    def test_record_without_timings(self):
        record = self.report(0).as_record(include_timings=False)
        self.assertNotIn('total_ms', record)
        self.assertEqual(record['observations'], 10)


class MappingTest(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.config = quick_config(seed=3)
        cls.result = run_mapping(static_sequence(15), cls.config)

    def test_one_entry_per_observation(self):
        self.assertEqual(len(self.result.estimate), 15)
        self.assertEqual(len(self.result.report.observations), 15)

    def test_frame_count_spawns(self):
        topo_map = self.result.topo_map
        report = self.result.report
        self.assertEqual(len(topo_map), 1 + len(report.as_record()['spawn_reasons']))
        self.assertTrue(all(reason == 'frame_count' for reason in report.as_record()['spawn_reasons']))
        for frame in topo_map.frames.values():
            self.assertLessEqual(frame.observation_count, 12 + report.skipped)
        self.assertEqual(topo_map.frame(0).t_start, 0)

    def test_world_poses_match_anchor_composition(self):
        estimate = self.result.estimate
        for rebuilt, stored in zip(estimate.reconstructed(self.result.topo_map), estimate.world_poses):
            np.testing.assert_allclose(rebuilt.as_matrix(), stored.as_matrix(), atol=1e-9)

    def test_stage_timings_within_total(self):
        report = self.result.report
        self.assertLessEqual(sum(report.stage_totals().values()), report.total_ms)
        for stage, total in report.stage_totals().items():
            self.assertGreater(total, 0.0, stage)

    def test_runs_are_deterministic(self):
        again = run_mapping(static_sequence(15), self.config)
        np.testing.assert_array_equal(again.estimate.positions(), self.result.estimate.positions())
        self.assertEqual(
            again.report.as_record(include_timings=False), self.result.report.as_record(include_timings=False),
        )

    def test_too_few_observations(self):
        with self.assertRaises(InsufficientDataError):
            run_mapping(static_sequence(1), self.config)

    def test_frames_use_the_configured_store(self):
        config = self.config.replace(map={'voxel_size': 0.05, 'neighbors': 3})
        field = Mapper(sphere_orbit(2).intrinsics, config).topo_map.new_field()
        self.assertEqual(field.store.voxel_size, 0.05)
        self.assertEqual(field.store.neighbors, 3)
        self.assertEqual(field.store.feature_dim, 4)
        for frame in self.result.topo_map.frames.values():
            self.assertEqual(frame.field.store.voxel_size, self.config.map.voxel_size)


@tag('slow')
class MappingOracleTest(SimpleTestCase):
    def test_static_camera_stays_put(self):
        result = run_mapping(static_sequence(30), quick_config().replace(training={'max_iters': 100}))
        start = result.estimate.world_poses[0]
        for pose in result.estimate.world_poses:
            self.assertLess(np.linalg.norm(pose.translation - start.translation), 1e-2)

    def test_frame_count_policy_over_long_sequence(self):
        config = quick_config().replace(spawn={'max_frames': 120})
        result = run_mapping(static_sequence(150), config)
        self.assertEqual(len(result.topo_map), 2)
        self.assertEqual(result.topo_map.frame(1).t_start, 120)

    def test_loop_square_trajectory_error(self):
        sequence = loop_square()
        result = run_mapping(sequence, load_config(preset='desk'))
        ate = evaluate_estimate(result.estimate, sequence.timestamps, sequence.ground_truth_poses())
        self.assertEqual(ate.matched, len(sequence))
        self.assertLess(ate.rmse, 0.02)


class AteTest(SimpleTestCase):
    def setUp(self):
        self.timestamps = np.arange(20) / 30.0
        t = np.linspace(0.0, 2.0, 20)
        self.truth = np.stack([np.cos(t), np.sin(t), 0.1 * t], axis=1)

    def test_identical_trajectories(self):
        result = evaluate_ate(self.timestamps, self.truth, self.timestamps, self.truth)
        self.assertAlmostEqual(result.rmse, 0.0, places=12)
        self.assertEqual(result.matched, 20)

    def test_rigid_offset_is_aligned_away(self):
        offset = exp_map(np.array([0.2, -0.1, 0.3, 1.0, -2.0, 0.5]))
        result = evaluate_ate(self.timestamps, offset.apply(self.truth), self.timestamps, self.truth)
        self.assertAlmostEqual(result.rmse, 0.0, places=9)

    def test_rmse_of_known_errors(self):
        self.assertAlmostEqual(translational_rmse([0.03, 0.04]), 0.0354, places=4)

    def test_alignment_has_no_scale(self):
        alignment = rigid_alignment(self.truth * 2.0, self.truth)
        self.assertAlmostEqual(np.linalg.det(alignment.rotation), 1.0)
        errors = np.linalg.norm(alignment.apply(self.truth * 2.0) - self.truth, axis=1)
        self.assertGreater(translational_rmse(errors), 0.1)

    def test_per_frame_rmse(self):
        estimate = self.truth.copy()
        estimate[10:] += [0.0, 0.0, 0.01]
        ids = [0] * 10 + [1] * 10
        result = evaluate_ate(self.timestamps, estimate, self.timestamps, self.truth, ids)
        self.assertEqual(sorted(result.per_frame), [0, 1])

    def test_too_few_matches(self):
        with self.assertRaises(InsufficientDataError):
            evaluate_ate([0.0], self.truth[:1], [0.0], self.truth[:1])
        with self.assertRaises(InsufficientDataError):
            evaluate_ate([0.0, 1.0], self.truth[:2], [5.0, 6.0], self.truth[:2])


class BenchPlannerTest(SimpleTestCase):
    def test_paired_seeds_on_empty_world(self):
        world = AnalyticWorld('open', [[0.0, 0.0], [5.0, 5.0]], [], [0.5, 0.5], [4.5, 4.5])
        table, results = bench_planner(world, range(3))
        self.assertEqual(table.seeds, [0, 1, 2])
        self.assertEqual(set(results), {'goal_biased', 'baseline'})
        self.assertTrue(all(r.success for runs in results.values() for r in runs))
        self.assertLessEqual(table.length_ratio, 1.0 + 1e-9)
        self.assertIn('ratio', table.as_text())
        self.assertEqual(table.as_record()['seeds'], 3)

    @tag('slow')
    def test_goal_bias_beats_baseline_on_corridor(self):
        world = AnalyticWorld(
            'corridor', [[0.0, 0.0], [10.0, 3.0]],
            [Sphere([3.0, 1.0], 0.4), Sphere([5.0, 2.0], 0.4), Sphere([7.0, 1.0], 0.4)],
            [0.5, 1.5], [9.5, 1.5],
        )
        table, _ = bench_planner(world, range(20))
        self.assertLessEqual(table.runtime_ratio, 0.5)
        self.assertLessEqual(table.tree_length_ratio, 0.85)
        self.assertLessEqual(table.length_ratio, 1.05)


class PlotsTest(SimpleTestCase):
    def test_empty_run_gives_header_only_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            written = emit_plots(tmp)
            self.assertEqual(len(written), len(HEADERS))
            for path in written:
                self.assertEqual(path.read_text(), HEADERS[path.name] + '\n')

    def test_rows_follow_inputs_and_are_reproducible(self):
        topo = {
            'nodes': [
                {'id': 0, 'anchor': {'translation': [0, 0, 0]}, 'observations': 12},
                {'id': 1, 'anchor': {'translation': [1, 0, 0]}, 'observations': 3},
            ],
            'edges': [{'from': 0, 'to': 1, 'kind': 'sequential'}],
        }
        planned = {'path': [[0, 0], [1, 1], [2, 1]], 'tree': {'nodes': [[0, 0], [1, 1]], 'parents': [-1, 0]}}
        with tempfile.TemporaryDirectory() as tmp:
            run = Path(tmp)
            (run / 'map.yaml').write_text(yaml.safe_dump(topo), encoding='utf-8')
            (run / 'plan.yaml').write_text(yaml.safe_dump(planned), encoding='utf-8')
            emit_plots(run, run / 'a')
            emit_plots(run, run / 'b')
            nodes = (run / 'a' / 'topo_nodes.dat').read_text().splitlines()
            self.assertEqual(len(nodes), 3)
            self.assertEqual(nodes[2], '1 1.000000 0.000000 0.000000 3')
            self.assertEqual(len((run / 'a' / 'planner_path.dat').read_text().splitlines()), 4)
            self.assertEqual((run / 'a' / 'planner_tree.dat').read_text().splitlines()[1],
                             '0 -1 0.000000 0.000000')
            for name in HEADERS:
                self.assertEqual((run / 'a' / name).read_bytes(), (run / 'b' / name).read_bytes())


class RecordTest(TestCase):
    def test_benchmark_row(self):
        world = AnalyticWorld('open', [[0.0, 0.0], [3.0, 3.0]], [], [0.5, 0.5], [2.5, 2.5])
        table, _ = bench_planner(world, range(2))
        row = record_benchmark(table)
        self.assertEqual(row.world, 'open')
        self.assertEqual(row.seeds, 2)
        self.assertEqual(PlannerBenchmark.objects.count(), 1)


@override_settings(IMPLICITNAV_RECORD_RUNS=True)
class CommandTest(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def call(self, *args):
        stdout = StringIO()
        call_command(*args, stdout=stdout, stderr=StringIO())
        return stdout.getvalue()

    def test_synth_writes_tum_layout(self):
        self.call('synth', 'sphere-orbit', '--count', '3', '--out', str(self.out))
        self.assertEqual(len(list((self.out / 'depth').glob('*.png'))), 3)
        self.assertEqual(len(load_tum(self.out)), 3)

    def test_plan_writes_record_and_plots(self):
        self.call('plan', 'corridor', '--seed', '1', '--out', str(self.out))
        record = yaml.safe_load((self.out / 'plan.yaml').read_text())
        self.assertTrue(record['success'])
        self.assertEqual(record['tree']['parents'][0], -1)
        self.call('export_plots', str(self.out))
        lines = (self.out / 'plots' / 'planner_path.dat').read_text().splitlines()
        self.assertEqual(len(lines), len(record['path']) + 1)

    def test_plan_failures_exit_with_4(self):
        with self.assertRaises(CommandError) as cm:
            self.call('plan', 'corridor', '--start', '3', '1', '--out', str(self.out))
        self.assertEqual(cm.exception.returncode, 4)
        with self.assertRaises(CommandError) as cm:
            self.call('plan', 'corridor', '--goal', '5', '2', '--out', str(self.out))
        self.assertEqual(cm.exception.returncode, 4)
        self.assertFalse(yaml.safe_load((self.out / 'plan.yaml').read_text())['success'])

    def test_bench_planner_records_row(self):
        output = self.call('bench_planner', 'empty', '--seeds', '2', '--out', str(self.out))
        self.assertIn('goal_biased', output)
        self.assertTrue((self.out / 'bench.yaml').exists())
        self.assertEqual(PlannerBenchmark.objects.count(), 1)

    def test_map_missing_dataset_exits_with_2(self):
        with self.assertRaises(CommandError) as cm:
            self.call('map', '--tum', str(self.out / 'missing'))
        self.assertEqual(cm.exception.returncode, 2)

    def test_map_synthetic_world(self):
        config = self.out / 'quick.yaml'
        dump_config(quick_config(), config)
        run_dir = self.out / 'run'
        try:
            self.call('map', '--synth', 'sphere-orbit', '--count', '150', '--max-frames', '4',
                      '--config', str(config), '--no-checkpoints', '--out', str(run_dir))
        except CommandError as exc:
            self.assertEqual(exc.returncode, 3)
        for name in ('trajectory.txt', 'map.yaml', 'report.yaml', 'config.yaml'):
            self.assertTrue((run_dir / name).exists(), name)
        report = yaml.safe_load((run_dir / 'report.yaml').read_text())
        self.assertEqual(report['observations'], 4)
        self.assertIn('ate', report)
        run = MappingRun.objects.get()
        self.assertEqual(run.observations, 4)
        self.assertEqual(run.status == MappingRun.Status.DEGRADED, report['degraded'])

    def test_map_exports_are_reproducible(self):
        config = self.out / 'quick.yaml'
        dump_config(quick_config(), config)
        for name in ('a', 'b'):
            try:
                self.call('map', '--synth', 'corridor', '--max-frames', '3', '--config', str(config),
                          '--no-checkpoints', '--out', str(self.out / name))
            except CommandError as exc:
                self.assertEqual(exc.returncode, 3)
        for name in ('trajectory.txt', 'map.yaml'):
            self.assertEqual((self.out / 'a' / name).read_bytes(), (self.out / 'b' / name).read_bytes())

    def test_eval_ate_per_frame(self):
        poses = [Pose(np.eye(3), [0.1 * k, 0.05 * k * k, 0.02 * k ** 3]) for k in range(4)]
        timestamps = [0.0, 0.1, 0.2, 0.3]
        write_trajectory(self.out / 'est.txt', timestamps, poses)
        write_trajectory(self.out / 'gt.txt', timestamps, poses)
        (self.out / 'map.yaml').write_text(
            yaml.safe_dump({'nodes': [{'id': 0, 't_start': 0}, {'id': 1, 't_start': 2}]}), encoding='utf-8',
        )
        output = self.call('eval_ate', str(self.out / 'est.txt'), str(self.out / 'gt.txt'),
                           '--per-frame', str(self.out / 'map.yaml'))
        self.assertIn('ATE RMSE 0.000000 m', output)
        self.assertIn('frame 1:', output)
