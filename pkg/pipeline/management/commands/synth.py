from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import ConfigError
from pipeline.synth import WORLDS, synth_world, write_dataset


class Command(BaseCommand):
    help = 'Render a synthetic world to a TUM-layout RGB-D dataset'

    def add_arguments(self, parser):
        parser.add_argument('name', type=str, help=f'One of {", ".join(WORLDS)}')
        parser.add_argument('--count', type=int, help='Number of poses')
        parser.add_argument('--out', type=str, help='Output directory')

    def handle(self, *args, **options):
        try:
            sequence = synth_world(options['name'], options['count'])
        except ConfigError as exc:
            raise CommandError(str(exc))
        out_dir = Path(options['out'] or Path(settings.IMPLICITNAV_OUTPUT_DIR) / options['name'])
        self.stdout.write(f"Rendering {len(sequence)} observations of {sequence.name}")
        write_dataset(sequence, out_dir)
        self.stdout.write(self.style.SUCCESS(f"Dataset written to {out_dir}"))
