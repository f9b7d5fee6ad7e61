"""
Management command to plan a path in a planner world.

Usage:
    python manage.py plan corridor
    python manage.py plan data/worlds/office.yaml --start 0.5 0.5 --goal 9 5 --baseline

Writes plan.yaml (path, statistics and the search tree). Exit code 4 when no
path is found or the start is in collision.
"""
from pathlib import Path

import yaml
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import ConfigError, InvalidStartError
from pipeline.config import load_config
from planner.rrt import baseline_plan, plan
from planner.worlds import load_world


class Command(BaseCommand):
    help = 'Plan a collision-free path between two points of a world'

    def add_arguments(self, parser):
        parser.add_argument('world', type=str, help='World name under data/worlds or a YAML path')
        parser.add_argument('--start', type=float, nargs='+', help='Start point (overrides the world file)')
        parser.add_argument('--goal', type=float, nargs='+', help='Goal point (overrides the world file)')
        parser.add_argument('--baseline', action='store_true', help='Use the uniform-sampling baseline')
        parser.add_argument('--config', type=str, help='Path to a run config YAML file')
        parser.add_argument('--preset', type=str, help='Preset name (desk, paper)')
        parser.add_argument('--seed', type=int, default=0, help='Random seed')
        parser.add_argument('--out', type=str, help='Output directory')

    def handle(self, *args, **options):
        try:
            world = load_world(options['world'])
            cfg = load_config(options['config'], options['preset']).planner
        except ConfigError as exc:
            raise CommandError(str(exc))

        start = options['start'] if options['start'] is not None else world.start
        goal = options['goal'] if options['goal'] is not None else world.goal
        if start is None or goal is None:
            raise CommandError(f"World {world.name} has no start/goal; pass --start and --goal")
        if len(start) != world.dim or len(goal) != world.dim:
            raise CommandError(f"Start and goal need {world.dim} coordinates")

        planner = baseline_plan if options['baseline'] else plan
        try:
            result = planner(start, goal, world, cfg, rng_seed=options['seed'])
        except InvalidStartError as exc:
            raise CommandError(str(exc), returncode=4)

        out_dir = Path(options['out'] or Path(settings.IMPLICITNAV_OUTPUT_DIR) / f'plan_{world.name}')
        out_dir.mkdir(parents=True, exist_ok=True)
        record = result.as_record()
        record['world'] = world.name
        record['planner'] = 'baseline' if options['baseline'] else 'goal_biased'
        record['seed'] = options['seed']
        nodes = result.tree_nodes if result.tree_nodes is not None else []
        parents = result.tree_parents if result.tree_parents is not None else []
        record['tree'] = {
            'nodes': [[round(float(x), 9) for x in node] for node in nodes],
            'parents': [int(p) for p in parents],
        }
        with open(out_dir / 'plan.yaml', 'w', encoding='utf-8') as f:
            yaml.safe_dump(record, f, sort_keys=False)

        if not result.success:
            raise CommandError(f"No path found in {world.name}: {result.failure}", returncode=4)
        self.stdout.write(self.style.SUCCESS(
            f"Path of {result.length:.2f} m with {len(result.path)} waypoints "
            f"after {result.iterations} iterations ({result.runtime_ms:.0f} ms)"
        ))
