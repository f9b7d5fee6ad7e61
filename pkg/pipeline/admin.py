from django.contrib import admin
from django.utils.translation import gettext_lazy as _

from .models import MappingRun, PlannerBenchmark


@admin.register(MappingRun)
class MappingRunAdmin(admin.ModelAdmin):
    list_display = ['source', 'preset', 'seed', 'status', 'observations', 'skipped', 'frames', 'ate_rmse', 'created_at']
    list_filter = ['status', 'preset']
    search_fields = ['source', 'output_dir']
    ordering = ['-created_at']
    readonly_fields = ['created_at']
    fieldsets = [
        (None, {
            'fields': ['source', 'preset', 'seed', 'status']
        }),
        (_('Result'), {
            'fields': ['observations', 'skipped', 'frames', 'ate_rmse']
        }),
        (_('Timing'), {
            'fields': ['stage_ms', 'total_ms']
        }),
        (_('Output'), {
            'fields': ['output_dir', 'created_at']
        }),
    ]


@admin.register(PlannerBenchmark)
class PlannerBenchmarkAdmin(admin.ModelAdmin):
    list_display = ['world', 'seeds', 'median_runtime_ms', 'baseline_median_runtime_ms', 'runtime_ratio',
                    'length_ratio', 'created_at']
    list_filter = ['world']
    search_fields = ['world']
    ordering = ['-created_at']
