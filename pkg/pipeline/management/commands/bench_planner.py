from pathlib import Path

import yaml
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import ConfigError
from pipeline.bench import bench_planner
from pipeline.config import load_config
from pipeline.models import record_benchmark
from planner.worlds import load_world


class Command(BaseCommand):
    help = 'Compare the goal-biased planner with the RRT* baseline over paired seeds'

    def add_arguments(self, parser):
        parser.add_argument('world', type=str, help='World name under data/worlds or a YAML path')
        parser.add_argument('--seeds', type=int, default=20, help='Number of seeds (0..N-1)')
        parser.add_argument('--config', type=str, help='Path to a run config YAML file')
        parser.add_argument('--preset', type=str, help='Preset name (desk, paper)')
        parser.add_argument('--out', type=str, help='Output directory')

    def handle(self, *args, **options):
        if options['seeds'] < 1:
            raise CommandError("--seeds must be positive")
        try:
            world = load_world(options['world'])
            cfg = load_config(options['config'], options['preset']).planner
        except ConfigError as exc:
            raise CommandError(str(exc))
        if world.start is None or world.goal is None:
            raise CommandError(f"World {world.name} has no start/goal")

        self.stdout.write(f"Benchmarking {world.name} over {options['seeds']} seeds")
        table, _ = bench_planner(world, range(options['seeds']), cfg)

        out_dir = Path(options['out'] or Path(settings.IMPLICITNAV_OUTPUT_DIR) / f'bench_{world.name}')
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / 'bench.yaml', 'w', encoding='utf-8') as f:
            yaml.safe_dump(table.as_record(), f, sort_keys=False)
        if settings.IMPLICITNAV_RECORD_RUNS:
            record_benchmark(table)

        self.stdout.write(table.as_text())
        self.stdout.write(self.style.SUCCESS(f"Benchmark written to {out_dir / 'bench.yaml'}"))
