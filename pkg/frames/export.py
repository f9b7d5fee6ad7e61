"""Structured-text export of the topological map."""
import logging
from pathlib import Path

import yaml

from field.checkpoint import save_field

logger = logging.getLogger(__name__)


def _pose_record(pose):
    return {
        'translation': [round(float(x), 9) for x in pose.translation],
        'quaternion': [round(float(x), 9) for x in pose.quaternion()],
    }


def map_record(topo_map):
    nodes = []
    for frame in sorted(topo_map.frames.values(), key=lambda f: f.id):
        nodes.append({
            'id': frame.id,
            'anchor': _pose_record(frame.anchor_pose),
            't_start': frame.t_start,
            't_end': frame.t_end,
            'observations': frame.observation_count,
            'map_points': len(frame.field.store),
            'keypoints': len(frame.keypoints) if frame.keypoints is not None else 0,
            'spawn_reason': frame.spawn_reason.value if frame.spawn_reason else None,
        })
    edges = [
        {
            'from': edge.from_id,
            'to': edge.to_id,
            'kind': edge.kind.value,
            'relative_pose': _pose_record(edge.relative_pose),
            'observation_span': list(edge.observation_span),
        }
        for edge in topo_map.edges
    ]
    return {'nodes': nodes, 'edges': edges}


def export_map(topo_map, out_dir, checkpoints=True):
    """Write map.yaml and, optionally, frames/frame_XXX.pt under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / 'map.yaml'
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(map_record(topo_map), f, sort_keys=False)
    if checkpoints:
        for frame in topo_map.frames.values():
            save_field(frame.field, out_dir / 'frames' / f'frame_{frame.id:03d}.pt')
    logger.info(f'Exported {len(topo_map)} frames and {len(topo_map.edges)} edges to {out_dir}')
    return path
