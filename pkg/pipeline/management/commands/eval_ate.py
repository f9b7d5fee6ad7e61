"""
Management command to compute the absolute trajectory error of an estimate.

Usage:
    python manage.py eval_ate output/desk/trajectory.txt data/desk/groundtruth.txt
    python manage.py eval_ate estimate.txt groundtruth.txt --per-frame output/desk/map.yaml
"""
from pathlib import Path

import numpy as np
import yaml
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import IngestionError, InsufficientDataError
from pipeline.evaluation import evaluate_ate
from pipeline.tum import read_trajectory


def frame_ids_from_map(path, timestamps):
    """Frame id of each estimate timestamp, from the observation spans in map.yaml."""
    path = Path(path)
    if not path.exists():
        raise CommandError(f"File not found: {path}", returncode=2)
    with open(path, encoding='utf-8') as f:
        nodes = (yaml.safe_load(f) or {}).get('nodes') or []
    starts = sorted((node['t_start'], node['id']) for node in nodes)
    ids = []
    for index in range(len(timestamps)):
        owner = starts[0][1] if starts else 0
        for t_start, frame_id in starts:
            if t_start <= index:
                owner = frame_id
        ids.append(owner)
    return ids


class Command(BaseCommand):
    help = 'Compute the ATE RMSE of a TUM trajectory against ground truth'

    def add_arguments(self, parser):
        parser.add_argument('estimate', type=str, help='Estimated trajectory (TUM pose format)')
        parser.add_argument('groundtruth', type=str, help='Ground-truth trajectory (TUM pose format)')
        parser.add_argument(
            '--per-frame',
            type=str,
            help='map.yaml of the run, to add per-frame RMSE'
        )

    def handle(self, *args, **options):
        try:
            timestamps, poses = read_trajectory(options['estimate'])
            truth_timestamps, truth_poses = read_trajectory(options['groundtruth'])
        except IngestionError as exc:
            raise CommandError(str(exc), returncode=2)

        frame_ids = None
        if options['per_frame']:
            frame_ids = frame_ids_from_map(options['per_frame'], timestamps)
        try:
            ate = evaluate_ate(
                timestamps, np.array([p.translation for p in poses]).reshape(-1, 3),
                truth_timestamps, np.array([p.translation for p in truth_poses]).reshape(-1, 3),
                frame_ids,
            )
        except InsufficientDataError as exc:
            raise CommandError(str(exc), returncode=2)

        self.stdout.write(f"matched {ate.matched}")
        for frame_id, rmse in sorted(ate.per_frame.items()):
            self.stdout.write(f"  frame {frame_id}: {rmse:.6f} m")
        self.stdout.write(self.style.SUCCESS(f"ATE RMSE {ate.rmse:.6f} m"))
