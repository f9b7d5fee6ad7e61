"""
Figure data as whitespace-separated text files.

Each file starts with one ``#`` header line naming its columns:

* ``trajectory.dat``   ``timestamp tx ty tz`` (from trajectory.txt)
* ``topo_nodes.dat``   ``id tx ty tz observations`` (frame anchors from map.yaml)
* ``topo_edges.dat``   ``from to kind`` (kind is ``sequential`` or ``loop``)
* ``planner_tree.dat`` ``node parent x y [z]`` (from plan.yaml, parent -1 is the root)
* ``planner_path.dat`` ``index x y [z]``

Missing inputs produce header-only files.
"""
import logging
from pathlib import Path

import yaml

from .tum import read_file_list

logger = logging.getLogger(__name__)

HEADERS = {
    'trajectory.dat': '# timestamp tx ty tz',
    'topo_nodes.dat': '# id tx ty tz observations',
    'topo_edges.dat': '# from to kind',
    'planner_tree.dat': '# node parent x y [z]',
    'planner_path.dat': '# index x y [z]',
}


def _number(value):
    return f'{float(value):.6f}'


def _load_yaml(path):
    if not path.exists():
        return {}
    with open(path, encoding='utf-8') as f:
        return yaml.safe_load(f) or {}


def figure_rows(run_dir):
    run_dir = Path(run_dir)
    rows = {name: [] for name in HEADERS}

    trajectory = run_dir / 'trajectory.txt'
    if trajectory.exists():
        for timestamp, fields in read_file_list(trajectory):
            rows['trajectory.dat'].append(' '.join([f'{timestamp:.6f}'] + [_number(v) for v in fields[:3]]))

    topo = _load_yaml(run_dir / 'map.yaml')
    for node in topo.get('nodes') or []:
        translation = node['anchor']['translation']
        rows['topo_nodes.dat'].append(
            ' '.join([str(node['id'])] + [_number(v) for v in translation] + [str(node.get('observations', 0))])
        )
    for edge in topo.get('edges') or []:
        rows['topo_edges.dat'].append(f'{edge["from"]} {edge["to"]} {edge["kind"]}')

    planned = _load_yaml(run_dir / 'plan.yaml')
    tree = planned.get('tree') or {}
    for i, (node, parent) in enumerate(zip(tree.get('nodes') or [], tree.get('parents') or [])):
        rows['planner_tree.dat'].append(' '.join([str(i), str(parent)] + [_number(v) for v in node]))
    for i, point in enumerate(planned.get('path') or []):
        rows['planner_path.dat'].append(' '.join([str(i)] + [_number(v) for v in point]))
    return rows


def emit_plots(run_dir, out_dir=None):
    """Write the figure data files of a run directory; returns their paths."""
    out_dir = Path(out_dir or Path(run_dir) / 'plots')
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, lines in figure_rows(run_dir).items():
        path = out_dir / name
        path.write_text('\n'.join([HEADERS[name]] + lines) + '\n', encoding='utf-8')
        written.append(path)
    logger.info(f'Wrote {len(written)} figure data files to {out_dir}')
    return written
