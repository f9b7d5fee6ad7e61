"""
Management command to build a topological map from an RGB-D sequence.

Usage:
    python manage.py map --tum data/rgbd_dataset_freiburg1_desk --preset desk
    python manage.py map --synth sphere-orbit --max-frames 40 --out output/orbit

Writes trajectory.txt, map.yaml, frames/frame_XXX.pt and report.yaml to the
output directory. Exit code 2 on unreadable input, 3 when the run is degraded.
"""
from pathlib import Path

import yaml
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import ConfigError, IngestionError, InsufficientDataError
from frames.export import export_map
from pipeline.config import dump_config, load_config
from pipeline.evaluation import evaluate_estimate
from pipeline.mapping import run_mapping
from pipeline.models import record_run
from pipeline.synth import synth_world
from pipeline.tum import load_tum, write_trajectory


class Command(BaseCommand):
    help = 'Map an RGB-D sequence into local frames and write the map, trajectory and report'

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument(
            '--tum',
            type=str,
            help='Path to a TUM RGB-D sequence directory'
        )
        source.add_argument(
            '--synth',
            type=str,
            help='Name of a synthetic world (sphere-orbit, box-room, corridor, two-rooms, loop-square)'
        )
        parser.add_argument('--config', type=str, help='Path to a run config YAML file')
        parser.add_argument('--preset', type=str, help='Preset name (desk, paper)')
        parser.add_argument('--seed', type=int, help='Random seed')
        parser.add_argument('--max-frames', type=int, help='Stop after this many observations')
        parser.add_argument('--count', type=int, help='Number of poses of a synthetic world')
        parser.add_argument('--out', type=str, help='Output directory')
        parser.add_argument(
            '--no-checkpoints',
            action='store_true',
            help='Skip writing per-frame field checkpoints'
        )

    def handle(self, *args, **options):
        try:
            config = load_config(options['config'], options['preset'])
            run = {}
            if options['seed'] is not None:
                run['seed'] = options['seed']
            if options['max_frames'] is not None:
                run['max_frames'] = options['max_frames']
            if run:
                config = config.replace(run=run)
        except ConfigError as exc:
            raise CommandError(str(exc))

        sequence, source = self.load_sequence(options, config.run.max_frames)
        out_dir = Path(options['out'] or Path(settings.IMPLICITNAV_OUTPUT_DIR) / Path(source).name)
        self.stdout.write(f"Mapping {len(sequence)} observations from {source}")

        try:
            result = run_mapping(sequence, config, source)
        except InsufficientDataError as exc:
            raise CommandError(str(exc), returncode=2)

        estimate = result.estimate
        write_trajectory(out_dir / 'trajectory.txt', estimate.timestamps, estimate.world_poses)
        export_map(result.topo_map, out_dir, checkpoints=not options['no_checkpoints'])
        dump_config(config, out_dir / 'config.yaml')

        ate = None
        truth = sequence.ground_truth_poses()
        if truth:
            try:
                ate = evaluate_estimate(estimate, sequence.timestamps, truth)
            except InsufficientDataError as exc:
                self.stderr.write(f"  ATE skipped: {exc}")

        report = result.report.as_record()
        report['frames'] = len(result.topo_map)
        if ate is not None:
            report['ate'] = ate.as_record()
        with open(out_dir / 'report.yaml', 'w', encoding='utf-8') as f:
            yaml.safe_dump(report, f, sort_keys=False)

        if settings.IMPLICITNAV_RECORD_RUNS:
            record_run(result, source, options['preset'] or '', config.run.seed, ate, out_dir)

        summary = f"{len(result.topo_map)} frames, {result.report.skipped} skipped"
        if ate is not None:
            summary += f", ATE {ate.rmse * 100.0:.2f} cm"
        if result.report.degraded:
            self.stdout.write(self.style.WARNING(f"Degraded run written to {out_dir} ({summary})"))
            raise CommandError(
                f"{result.report.skipped} of {len(result.report.observations)} observations skipped",
                returncode=3,
            )
        self.stdout.write(self.style.SUCCESS(f"Map written to {out_dir} ({summary})"))

    def load_sequence(self, options, max_frames):
        if options['tum']:
            try:
                return load_tum(options['tum'], max_frames or None), options['tum']
            except IngestionError as exc:
                raise CommandError(str(exc), returncode=2)
        try:
            return synth_world(options['synth'], options['count']), options['synth']
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=2)
