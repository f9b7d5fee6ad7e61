import logging

from django.db import DatabaseError, models
from django.utils.translation import gettext_lazy as _

logger = logging.getLogger(__name__)


class MappingRun(models.Model):
    """One invocation of the ``map`` command."""

    class Status(models.TextChoices):
        COMPLETED = 'completed', _('Completed')
        DEGRADED = 'degraded', _('Degraded')

    source = models.CharField(_('source'), max_length=300)
    preset = models.CharField(_('preset'), max_length=50, blank=True)
    seed = models.IntegerField(_('seed'), default=0)
    status = models.CharField(_('status'), max_length=20, choices=Status.choices, default=Status.COMPLETED)
    observations = models.PositiveIntegerField(_('observations'), default=0)
    skipped = models.PositiveIntegerField(_('skipped observations'), default=0)
    frames = models.PositiveIntegerField(_('local frames'), default=0)
    ate_rmse = models.FloatField(_('ATE RMSE (m)'), null=True, blank=True)
    stage_ms = models.JSONField(_('stage timings (ms)'), default=dict, blank=True)
    total_ms = models.FloatField(_('wall time (ms)'), default=0.0)
    output_dir = models.CharField(_('output directory'), max_length=500, blank=True)
    created_at = models.DateTimeField(_('created at'), auto_now_add=True)

    class Meta:
        verbose_name = _('mapping run')
        verbose_name_plural = _('mapping runs')
        ordering = ['-created_at']

    def __str__(self):
        return f'{self.source} ({self.get_status_display()}, {self.frames} frames)'

    @property
    def ate_cm(self):
        return None if self.ate_rmse is None else self.ate_rmse * 100.0


class PlannerBenchmark(models.Model):
    """One invocation of the ``bench_planner`` command."""
    world = models.CharField(_('world'), max_length=200)
    seeds = models.PositiveIntegerField(_('seeds'))
    median_runtime_ms = models.FloatField(_('median runtime (ms)'))
    baseline_median_runtime_ms = models.FloatField(_('baseline median runtime (ms)'))
    median_length = models.FloatField(_('median length (m)'), null=True, blank=True)
    baseline_median_length = models.FloatField(_('baseline median length (m)'), null=True, blank=True)
    runtime_ratio = models.FloatField(_('runtime ratio'))
    length_ratio = models.FloatField(_('length ratio'), null=True, blank=True)
    created_at = models.DateTimeField(_('created at'), auto_now_add=True)

    class Meta:
        verbose_name = _('planner benchmark')
        verbose_name_plural = _('planner benchmarks')
        ordering = ['-created_at']

    def __str__(self):
        return f'{self.world}: runtime x{self.runtime_ratio:.2f}'


def _nan_to_none(value):
    return None if value != value else value


def record_run(result, source, preset='', seed=0, ate=None, output_dir=''):
    """Store a mapping run; returns None when the database is unavailable."""
    report = result.report
    try:
        return MappingRun.objects.create(
            source=source,
            preset=preset or '',
            seed=seed,
            status=MappingRun.Status.DEGRADED if report.degraded else MappingRun.Status.COMPLETED,
            observations=len(report.observations),
            skipped=report.skipped,
            frames=len(result.topo_map),
            ate_rmse=ate.rmse if ate is not None else None,
            stage_ms={k: round(v, 3) for k, v in report.stage_totals().items()},
            total_ms=report.total_ms,
            output_dir=str(output_dir),
        )
    except DatabaseError as exc:
        logger.warning(f'Run not recorded: {exc}')
        return None


def record_benchmark(table):
    ours, theirs = table.stats['goal_biased'], table.stats['baseline']
    try:
        return PlannerBenchmark.objects.create(
            world=table.world,
            seeds=len(table.seeds),
            median_runtime_ms=ours.median_runtime_ms,
            baseline_median_runtime_ms=theirs.median_runtime_ms,
            median_length=_nan_to_none(ours.median_length),
            baseline_median_length=_nan_to_none(theirs.median_length),
            runtime_ratio=table.runtime_ratio,
            length_ratio=_nan_to_none(table.length_ratio),
        )
    except DatabaseError as exc:
        logger.warning(f'Benchmark not recorded: {exc}')
        return None
