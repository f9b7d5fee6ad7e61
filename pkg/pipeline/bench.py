"""Paired-seed comparison of the goal-biased planner against the RRT* baseline."""
import logging
from dataclasses import dataclass

import numpy as np

from planner.rrt import PlannerConfig, baseline_plan, plan

logger = logging.getLogger(__name__)

PLANNERS = (('goal_biased', plan), ('baseline', baseline_plan))


@dataclass(frozen=True)
class PlannerStats:
    name: str
    runs: int
    successes: int
    median_runtime_ms: float
    iqr_runtime_ms: float
    median_length: float
    iqr_length: float
    median_tree_size: float
    median_iterations: float
    median_tree_length: float

    def as_record(self):
        return {k: (round(v, 6) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class BenchmarkTable:
    world: str
    seeds: list
    stats: dict
    runtime_ratio: float
    length_ratio: float
    tree_ratio: float
    tree_length_ratio: float

    def as_record(self):
        return {
            'world': self.world,
            'seeds': len(self.seeds),
            'planners': {name: s.as_record() for name, s in self.stats.items()},
            'runtime_ratio': round(self.runtime_ratio, 6),
            'length_ratio': round(self.length_ratio, 6),
            'tree_ratio': round(self.tree_ratio, 6),
            'tree_length_ratio': round(self.tree_length_ratio, 6),
        }

    def as_text(self):
        lines = [f'{"planner":<12} {"ok":>5} {"runtime ms":>12} {"iqr":>8} {"length m":>9} {"iqr":>7} {"tree":>7}']
        for s in self.stats.values():
            lines.append(
                f'{s.name:<12} {s.successes:>2}/{s.runs:<2} {s.median_runtime_ms:>12.1f} {s.iqr_runtime_ms:>8.1f} '
                f'{s.median_length:>9.2f} {s.iqr_length:>7.2f} {s.median_tree_size:>7.0f}'
            )
        lines.append(f'{"ratio":<12} {"":>5} {self.runtime_ratio:>12.2f} {"":>8} {self.length_ratio:>9.2f} '
                     f'{"":>7} {self.tree_ratio:>7.2f}')
        lines.append(f'{"tree paths":<12} {"":>5} {"":>12} {"":>8} {self.tree_length_ratio:>9.2f}')
        return '\n'.join(lines)


def _median_iqr(values):
    if not len(values):
        return float('nan'), float('nan')
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return float(median), float(q3 - q1)


def _stats(name, results):
    ok = [r for r in results if r.success]
    runtime = _median_iqr([r.runtime_ms for r in results])
    length = _median_iqr([r.length for r in ok])
    searched = _median_iqr([r.tree_length for r in ok])[0]
    return PlannerStats(
        name, len(results), len(ok), runtime[0], runtime[1], length[0], length[1],
        float(np.median([r.tree_size for r in results])), float(np.median([r.iterations for r in results])), searched,
    )


def bench_planner(world, seeds, cfg=None, start=None, goal=None):
    """Run both planners on the same seeds and budget; ratios are ours over baseline medians."""
    cfg = cfg or PlannerConfig()
    start = world.start if start is None else np.asarray(start, dtype=np.float64)
    goal = world.goal if goal is None else np.asarray(goal, dtype=np.float64)
    seeds = list(seeds)
    results = {name: [] for name, _ in PLANNERS}
    for seed in seeds:
        for name, planner in PLANNERS:
            results[name].append(planner(start, goal, world, cfg, rng_seed=seed))
    stats = {name: _stats(name, runs) for name, runs in results.items()}
    ours, theirs = stats['goal_biased'], stats['baseline']
    table = BenchmarkTable(
        getattr(world, 'name', 'world'), seeds, stats,
        ours.median_runtime_ms / theirs.median_runtime_ms,
        ours.median_length / theirs.median_length,
        theirs.median_tree_size / ours.median_tree_size,
        ours.median_tree_length / theirs.median_tree_length,
    )
    logger.info(
        f'Benchmark on {table.world} over {len(seeds)} seeds: runtime ratio {table.runtime_ratio:.2f}, '
        f'length ratio {table.length_ratio:.2f} (tree paths {table.tree_length_ratio:.2f})'
    )
    return table, results
