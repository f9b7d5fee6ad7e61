from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="MappingRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("source", models.CharField(max_length=300, verbose_name="source")),
                ("preset", models.CharField(blank=True, max_length=50, verbose_name="preset")),
                ("seed", models.IntegerField(default=0, verbose_name="seed")),
                (
                    "status",
                    models.CharField(
                        choices=[("completed", "Completed"), ("degraded", "Degraded")],
                        default="completed",
                        max_length=20,
                        verbose_name="status",
                    ),
                ),
                ("observations", models.PositiveIntegerField(default=0, verbose_name="observations")),
                ("skipped", models.PositiveIntegerField(default=0, verbose_name="skipped observations")),
                ("frames", models.PositiveIntegerField(default=0, verbose_name="local frames")),
                ("ate_rmse", models.FloatField(blank=True, null=True, verbose_name="ATE RMSE (m)")),
                ("stage_ms", models.JSONField(blank=True, default=dict, verbose_name="stage timings (ms)")),
                ("total_ms", models.FloatField(default=0.0, verbose_name="wall time (ms)")),
                ("output_dir", models.CharField(blank=True, max_length=500, verbose_name="output directory")),
                ("created_at", models.DateTimeField(auto_now_add=True, verbose_name="created at")),
            ],
            options={
                "verbose_name": "mapping run",
                "verbose_name_plural": "mapping runs",
                "ordering": ["-created_at"],
            },
        ),
        migrations.CreateModel(
            name="PlannerBenchmark",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("world", models.CharField(max_length=200, verbose_name="world")),
                ("seeds", models.PositiveIntegerField(verbose_name="seeds")),
                ("median_runtime_ms", models.FloatField(verbose_name="median runtime (ms)")),
                ("baseline_median_runtime_ms", models.FloatField(verbose_name="baseline median runtime (ms)")),
                ("median_length", models.FloatField(blank=True, null=True, verbose_name="median length (m)")),
                (
                    "baseline_median_length",
                    models.FloatField(blank=True, null=True, verbose_name="baseline median length (m)"),
                ),
                ("runtime_ratio", models.FloatField(verbose_name="runtime ratio")),
                ("length_ratio", models.FloatField(blank=True, null=True, verbose_name="length ratio")),
                ("created_at", models.DateTimeField(auto_now_add=True, verbose_name="created at")),
            ],
            options={
                "verbose_name": "planner benchmark",
                "verbose_name_plural": "planner benchmarks",
                "ordering": ["-created_at"],
            },
        ),
    ]
