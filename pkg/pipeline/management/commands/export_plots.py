from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from pipeline.plots import emit_plots


class Command(BaseCommand):
    help = 'Write whitespace-separated figure data files for a run directory'

    def add_arguments(self, parser):
        parser.add_argument('report_dir', type=str, help='Directory written by map or plan')
        parser.add_argument('--out', type=str, help='Output directory (default REPORT_DIR/plots)')

    def handle(self, *args, **options):
        run_dir = Path(options['report_dir'])
        if not run_dir.is_dir():
            raise CommandError(f"Directory not found: {run_dir}")
        for path in emit_plots(run_dir, options['out']):
            self.stdout.write(f"  {path.name}")
        self.stdout.write(self.style.SUCCESS("Figure data written"))
